#ifndef RETMPC__ROM_IO_HPP_
#define RETMPC__ROM_IO_HPP_

/**
 * @file
 * @brief Versioned text artifact for ReducedModel.
 *
 * Every floating-point value is written as a hexadecimal float, so a
 * save/load cycle reproduces the model bit for bit. Layout (one record per line):
 *
 *   retmpc-rom 1
 *   dt <f>
 *   alpha_clamp <f> <f>
 *   pod_energy <f>
 *   training_alphas <count> <f>...
 *   law <rpe_lo> <rpe_hi> <choroid_lo> <choroid_hi> <mu_rpe_ref> <mu_choroid>
 *   vol <sign> <z_b> <z_e>
 *   matrix a_r <rows> <cols> <row-major values>
 *   matrix a_d <rows> <cols> ...
 *   matrix c_peak_r 1 <r> ...
 *   sampled input <p>       followed by: idx <p ints>, p lines "stencil <scale> <z_lo> <z_hi>", matrix proj
 *   sampled output <p>      same
 *   end
 *
 * b_map and gain_row are derived on load.
 */

#include <Eigen/Dense>

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include "errors.hpp"
#include "mor.hpp"

namespace retmpc {

inline constexpr int rom_format_version = 1;

inline std::string hex_double(double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

inline double parse_hex_double(const std::string & tok)
{
  double v       = 0;
  const char * b = tok.data();
  const char * e = b + tok.size();
  const auto res = std::from_chars(b, e, v, std::chars_format::hex);
  if (res.ec != std::errc{} || res.ptr != e) { throw IoError("malformed floating-point token '" + tok + "'"); }
  return v;
}

namespace detail {

inline void write_matrix(std::ostream & os, const char * name, const Eigen::MatrixXd & m)
{
  os << "matrix " << name << ' ' << m.rows() << ' ' << m.cols();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) { os << ' ' << hex_double(m(i, j)); }
  }
  os << '\n';
}

inline void write_sampled(std::ostream & os, const char * name, const SampledVector & sv)
{
  os << "sampled " << name << ' ' << sv.order() << '\n';
  os << "idx";
  for (auto i : sv.idx) { os << ' ' << i; }
  os << '\n';
  for (const auto & s : sv.stencils) {
    os << "stencil " << hex_double(s.scale) << ' ' << hex_double(s.z_lo) << ' ' << hex_double(s.z_hi) << '\n';
  }
  write_matrix(os, "proj", sv.proj);
}

class Reader
{
public:
  explicit Reader(std::istream & is) : is_(is) {}

  std::string word()
  {
    std::string t;
    if (!(is_ >> t)) { throw IoError("unexpected end of ROM artifact"); }
    return t;
  }

  void expect(const std::string & key)
  {
    const std::string t = word();
    if (t != key) { throw IoError("ROM artifact: expected '" + key + "', found '" + t + "'"); }
  }

  double real() { return parse_hex_double(word()); }

  long long integer()
  {
    const std::string t = word();
    long long v         = 0;
    const auto res      = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc{} || res.ptr != t.data() + t.size()) { throw IoError("malformed integer '" + t + "'"); }
    return v;
  }

  Eigen::MatrixXd matrix(const std::string & name)
  {
    expect("matrix");
    expect(name);
    const auto rows = integer(), cols = integer();
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 24)) { throw IoError("implausible matrix size for " + name); }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) { m(i, j) = real(); }
    }
    return m;
  }

  SampledVector sampled(const std::string & name)
  {
    expect("sampled");
    expect(name);
    const auto p = integer();
    if (p < 1 || p > ReducedModel::max_samples) { throw IoError("implausible DEIM order"); }
    SampledVector sv;
    expect("idx");
    for (long long l = 0; l < p; ++l) { sv.idx.push_back(static_cast<Eigen::Index>(integer())); }
    for (long long l = 0; l < p; ++l) {
      expect("stencil");
      EntryStencil s;
      s.scale = real();
      s.z_lo  = real();
      s.z_hi  = real();
      sv.stencils.push_back(s);
    }
    sv.proj = matrix("proj");
    return sv;
  }

private:
  std::istream & is_;
};

}  // namespace detail

inline void write_rom(std::ostream & os, const ReducedModel & m)
{
  os << "retmpc-rom " << rom_format_version << '\n';
  os << "dt " << hex_double(m.dt) << '\n';
  os << "alpha_clamp " << hex_double(m.alpha_min) << ' ' << hex_double(m.alpha_max) << '\n';
  os << "pod_energy " << hex_double(m.pod_energy) << '\n';
  os << "training_alphas " << m.training_alphas.size();
  for (double a : m.training_alphas) { os << ' ' << hex_double(a); }
  os << '\n';
  const auto & l = m.law;
  os << "law " << hex_double(l.rpe_lo) << ' ' << hex_double(l.rpe_hi) << ' ' << hex_double(l.choroid_lo) << ' '
     << hex_double(l.choroid_hi) << ' ' << hex_double(l.mu_rpe_ref) << ' ' << hex_double(l.mu_choroid) << '\n';
  os << "vol " << hex_double(m.vol_sign) << ' ' << hex_double(m.z_b) << ' ' << hex_double(m.z_e) << '\n';
  detail::write_matrix(os, "a_r", m.a_r);
  detail::write_matrix(os, "a_d", m.a_d);
  detail::write_matrix(os, "c_peak_r", m.c_peak_r);
  detail::write_sampled(os, "input", m.input);
  detail::write_sampled(os, "output", m.output);
  os << "end\n";
}

inline ReducedModel read_rom(std::istream & is)
{
  detail::Reader rd(is);
  rd.expect("retmpc-rom");
  const auto version = rd.integer();
  if (version != rom_format_version) {
    throw IoError("unsupported ROM artifact version " + std::to_string(version));
  }
  ReducedModel m;
  rd.expect("dt");
  m.dt = rd.real();
  rd.expect("alpha_clamp");
  m.alpha_min = rd.real();
  m.alpha_max = rd.real();
  rd.expect("pod_energy");
  m.pod_energy = rd.real();
  rd.expect("training_alphas");
  const auto na = rd.integer();
  if (na < 0 || na > 4096) { throw IoError("implausible training set size"); }
  for (long long i = 0; i < na; ++i) { m.training_alphas.push_back(rd.real()); }
  rd.expect("law");
  m.law.rpe_lo     = rd.real();
  m.law.rpe_hi     = rd.real();
  m.law.choroid_lo = rd.real();
  m.law.choroid_hi = rd.real();
  m.law.mu_rpe_ref = rd.real();
  m.law.mu_choroid = rd.real();
  rd.expect("vol");
  m.vol_sign = rd.real();
  m.z_b      = rd.real();
  m.z_e      = rd.real();
  m.a_r      = rd.matrix("a_r");
  m.a_d      = rd.matrix("a_d");
  const Eigen::MatrixXd cp = rd.matrix("c_peak_r");
  if (cp.rows() != 1) { throw IoError("c_peak_r must be a row"); }
  m.c_peak_r = cp.row(0);
  m.input    = rd.sampled("input");
  m.output   = rd.sampled("output");
  rd.expect("end");
  if (!(m.dt > 0) || m.a_d.rows() != m.a_d.cols() || m.a_r.rows() != m.a_d.rows()) {
    throw IoError("ROM artifact is inconsistent");
  }
  try {
    m.finalize();
  } catch (const std::runtime_error & e) {
    throw IoError(std::string("ROM artifact is inconsistent: ") + e.what());
  }
  return m;
}

inline void save_rom(const std::string & path, const ReducedModel & m)
{
  std::ofstream f(path, std::ios::binary);
  if (!f) { throw IoError("cannot open '" + path + "' for writing"); }
  write_rom(f, m);
  f.flush();
  if (!f) { throw IoError("write to '" + path + "' failed"); }
}

inline ReducedModel load_rom(const std::string & path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) { throw IoError("cannot open ROM artifact '" + path + "'"); }
  try {
    return read_rom(f);
  } catch (const IoError & e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace retmpc

#endif  // RETMPC__ROM_IO_HPP_
