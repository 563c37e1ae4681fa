#ifndef RETMPC__SPARSE_LDL_HPP_
#define RETMPC__SPARSE_LDL_HPP_

/**
 * @file
 * @brief Sparse LDL^T for quasi-definite matrices with a fixed pattern.
 *
 * analyze() computes a fill-reducing ordering, the elimination tree and the
 * column counts of L and allocates everything; factor() and solve() then run
 * without touching the heap, which keeps refactorization after values-only
 * updates usable inside a control loop. No pivoting: quasi-definite matrices
 * are strongly factorizable under any symmetric permutation.
 */

#include <Eigen/OrderingMethods>
#include <Eigen/Sparse>

#include <algorithm>
#include <vector>

#include "errors.hpp"

namespace retmpc {

class SparseLdl
{
public:
  using SpMat = Eigen::SparseMatrix<double>;

  /// `upper` must be compressed, upper-triangular, with every diagonal entry stored.
  void analyze(const SpMat & upper)
  {
    if (upper.rows() != upper.cols() || !upper.isCompressed()) {
      throw ConfigError("LDL input must be square and compressed");
    }
    n_ = static_cast<int>(upper.rows());

    // fill-reducing ordering on the symmetric pattern
    const SpMat sym = upper.selfadjointView<Eigen::Upper>();
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
    Eigen::AMDOrdering<int> amd;
    amd(sym, pinv);
    perm_.assign(static_cast<std::size_t>(n_), 0);
    newpos_.assign(static_cast<std::size_t>(n_), 0);
    for (int i = 0; i < n_; ++i) {
      const int np                           = pinv.indices()[i];
      newpos_[static_cast<std::size_t>(i)]   = np;
      perm_[static_cast<std::size_t>(np)]    = i;
    }

    // permuted upper triangle C and the value map K -> C
    std::vector<Eigen::Triplet<double, int>> trip;
    trip.reserve(static_cast<std::size_t>(upper.nonZeros()));
    for (int j = 0; j < n_; ++j) {
      for (SpMat::InnerIterator it(upper, j); it; ++it) {
        if (it.row() > j) { throw ConfigError("LDL input must be upper triangular"); }
        const int a = newpos_[static_cast<std::size_t>(it.row())], b = newpos_[static_cast<std::size_t>(j)];
        trip.emplace_back(std::min(a, b), std::max(a, b), 0.0);
      }
    }
    c_.resize(n_, n_);
    c_.setFromTriplets(trip.begin(), trip.end());
    c_.makeCompressed();
    map_.clear();
    map_.reserve(static_cast<std::size_t>(upper.nonZeros()));
    for (int j = 0; j < n_; ++j) {
      for (SpMat::InnerIterator it(upper, j); it; ++it) {
        const int a = newpos_[static_cast<std::size_t>(it.row())], b = newpos_[static_cast<std::size_t>(j)];
        map_.push_back(position(std::min(a, b), std::max(a, b)));
      }
    }
    for (int j = 0; j < n_; ++j) {
      const int * last = c_.innerIndexPtr() + c_.outerIndexPtr()[j + 1] - 1;
      if (c_.outerIndexPtr()[j + 1] == c_.outerIndexPtr()[j] || *last != j) {
        throw ConfigError("LDL input is missing a diagonal entry");
      }
    }

    // elimination tree and column counts
    const std::size_t un = static_cast<std::size_t>(n_);
    etree_.assign(un, -1);
    lnz_.assign(un, 0);
    std::vector<int> work(un, 0);
    const int * cp = c_.outerIndexPtr();
    const int * ci = c_.innerIndexPtr();
    for (int j = 0; j < n_; ++j) {
      work[static_cast<std::size_t>(j)] = j;
      for (int p = cp[j]; p < cp[j + 1]; ++p) {
        int i = ci[p];
        while (i < j && work[static_cast<std::size_t>(i)] != j) {
          if (etree_[static_cast<std::size_t>(i)] == -1) { etree_[static_cast<std::size_t>(i)] = j; }
          ++lnz_[static_cast<std::size_t>(i)];
          work[static_cast<std::size_t>(i)] = j;
          i                                 = etree_[static_cast<std::size_t>(i)];
        }
      }
    }
    lp_.assign(un + 1, 0);
    for (std::size_t i = 0; i < un; ++i) { lp_[i + 1] = lp_[i] + lnz_[i]; }
    li_.assign(static_cast<std::size_t>(lp_[un]), 0);
    lx_.assign(static_cast<std::size_t>(lp_[un]), 0.0);
    d_.assign(un, 0.0);
    dinv_.assign(un, 0.0);
    ymark_.assign(un, 0);
    yidx_.assign(un, 0);
    elim_.assign(un, 0);
    next_.assign(un, 0);
    yval_.assign(un, 0.0);
    xw_.assign(un, 0.0);
    analyzed_ = true;
  }

  bool analyzed() const { return analyzed_; }
  int size() const { return n_; }
  int positive_pivots() const { return positive_; }
  std::size_t nnz_l() const { return li_.size(); }

  /**
   * @brief Numeric factorization with the values of `upper` (pattern of analyze()).
   * @return false on a zero pivot.
   */
  bool factor(const SpMat & upper)
  {
    const double * kv = upper.valuePtr();
    double * cv       = c_.valuePtr();
    for (std::size_t p = 0; p < map_.size(); ++p) { cv[map_[p]] = kv[p]; }

    const int * cp = c_.outerIndexPtr();
    const int * ci = c_.innerIndexPtr();
    positive_      = 0;
    for (int i = 0; i < n_; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      ymark_[ui]    = 0;
      yval_[ui]     = 0;
      d_[ui]        = 0;
      next_[ui]     = lp_[ui];
    }

    for (int k = 0; k < n_; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      int nnz_y     = 0;
      for (int p = cp[k]; p < cp[k + 1]; ++p) {
        const int b = ci[p];
        if (b == k) {
          d_[uk] = cv[p];
          continue;
        }
        yval_[static_cast<std::size_t>(b)] = cv[p];
        int nxt                            = b;
        if (ymark_[static_cast<std::size_t>(nxt)] == 0) {
          ymark_[static_cast<std::size_t>(nxt)] = 1;
          elim_[0]                              = nxt;
          int nnz_e                             = 1;
          nxt                                   = etree_[static_cast<std::size_t>(b)];
          while (nxt != -1 && nxt < k) {
            if (ymark_[static_cast<std::size_t>(nxt)] == 1) { break; }
            ymark_[static_cast<std::size_t>(nxt)]   = 1;
            elim_[static_cast<std::size_t>(nnz_e++)] = nxt;
            nxt                                     = etree_[static_cast<std::size_t>(nxt)];
          }
          while (nnz_e) { yidx_[static_cast<std::size_t>(nnz_y++)] = elim_[static_cast<std::size_t>(--nnz_e)]; }
        }
      }
      for (int i = nnz_y - 1; i >= 0; --i) {
        const auto c     = static_cast<std::size_t>(yidx_[static_cast<std::size_t>(i)]);
        const int slot   = next_[c];
        const double yc  = yval_[c];
        for (int j = lp_[c]; j < slot; ++j) {
          yval_[static_cast<std::size_t>(li_[static_cast<std::size_t>(j)])] -= lx_[static_cast<std::size_t>(j)] * yc;
        }
        li_[static_cast<std::size_t>(slot)] = k;
        lx_[static_cast<std::size_t>(slot)] = yc * dinv_[c];
        d_[uk] -= yc * lx_[static_cast<std::size_t>(slot)];
        ++next_[c];
        yval_[c]  = 0;
        ymark_[c] = 0;
      }
      if (d_[uk] == 0.0) { return false; }
      if (d_[uk] > 0) { ++positive_; }
      dinv_[uk] = 1.0 / d_[uk];
    }
    return true;
  }

  /// Solve K x = b in place.
  template<typename Vec>
  void solve_in_place(Vec & x)
  {
    for (int i = 0; i < n_; ++i) { xw_[static_cast<std::size_t>(newpos_[static_cast<std::size_t>(i)])] = x[i]; }
    for (int i = 0; i < n_; ++i) {
      const double xi = xw_[static_cast<std::size_t>(i)];
      for (int j = lp_[static_cast<std::size_t>(i)]; j < lp_[static_cast<std::size_t>(i) + 1]; ++j) {
        xw_[static_cast<std::size_t>(li_[static_cast<std::size_t>(j)])] -= lx_[static_cast<std::size_t>(j)] * xi;
      }
    }
    for (int i = 0; i < n_; ++i) { xw_[static_cast<std::size_t>(i)] *= dinv_[static_cast<std::size_t>(i)]; }
    for (int i = n_ - 1; i >= 0; --i) {
      double acc = xw_[static_cast<std::size_t>(i)];
      for (int j = lp_[static_cast<std::size_t>(i)]; j < lp_[static_cast<std::size_t>(i) + 1]; ++j) {
        acc -= lx_[static_cast<std::size_t>(j)] * xw_[static_cast<std::size_t>(li_[static_cast<std::size_t>(j)])];
      }
      xw_[static_cast<std::size_t>(i)] = acc;
    }
    for (int i = 0; i < n_; ++i) { x[i] = xw_[static_cast<std::size_t>(newpos_[static_cast<std::size_t>(i)])]; }
  }

private:
  int position(int row, int col) const
  {
    const int * begin = c_.innerIndexPtr() + c_.outerIndexPtr()[col];
    const int * end   = c_.innerIndexPtr() + c_.outerIndexPtr()[col + 1];
    return static_cast<int>(std::lower_bound(begin, end, row) - c_.innerIndexPtr());
  }

  bool analyzed_ = false;
  int n_ = 0;
  int positive_ = 0;
  std::vector<int> perm_, newpos_;
  SpMat c_;
  std::vector<int> map_;
  std::vector<int> etree_, lnz_, lp_, li_;
  std::vector<double> lx_, d_, dinv_;
  std::vector<int> ymark_, yidx_, elim_, next_;
  std::vector<double> yval_, xw_;
};

}  // namespace retmpc

#endif  // RETMPC__SPARSE_LDL_HPP_
