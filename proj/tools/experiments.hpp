#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "config.hpp"
#include "rmtlab/characteristics.hpp"
#include "rmtlab/deloc.hpp"
#include "rmtlab/flow.hpp"
#include "rmtlab/locallaw.hpp"
#include "rmtlab/mde.hpp"

namespace rmtlab::cli {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Criterion {
  std::string name;
  bool pass = false;
  double worst = 0.0;
  std::string detail;
  /// Informational criteria are reported but do not gate by default.
  bool informational = false;
  bool gating = true;
};

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct Result {
  std::string experiment;
  Table table;
  std::vector<Criterion> criteria;

  [[nodiscard]] bool pass() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return !c.gating || c.pass; });
  }
};

/// A numerical failure reported with the module that raised it.
struct ModuleError : Error {
  ModuleError(const std::string& module, const std::string& what) : Error(module + ": " + what) {}
};

namespace detail {

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(n == 1 ? lo : lo + (hi - lo) * double(k) / double(n - 1));
  return out;
}

inline std::vector<double> logspace(double lo, double hi, std::size_t n) {
  std::vector<double> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(n == 1 ? lo : lo * std::pow(hi / lo, double(k) / double(n - 1)));
  return out;
}

class Reader {
 public:
  explicit Reader(const Config& c) : c_(c) {}

  void allow(std::initializer_list<const char*> keys) {
    for (auto k : keys) allowed_.insert(k);
  }

  void check_unused(const std::string& experiment) const {
    for (const auto& [key, entry] : c_.entries())
      if (!allowed_.count(key)) c_.fail(key, "not used by experiment '" + experiment + "'");
  }

  [[nodiscard]] Index N(Index lo, Index hi) const {
    const auto n = c_.require_key<std::uint64_t>("N");
    if (n < std::uint64_t(lo) || n > std::uint64_t(hi))
      c_.fail("N", "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<Index>(n);
  }

  [[nodiscard]] std::uint64_t integer(const std::string& key, std::uint64_t fallback, std::uint64_t lo,
                                      std::uint64_t hi) const {
    const auto v = c_.get<std::uint64_t>(key, fallback);
    if (v < lo || v > hi) c_.fail(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
  }

  [[nodiscard]] double number(const std::string& key, double fallback, double lo, double hi) const {
    const double v = c_.get<double>(key, fallback);
    if (!(v >= lo && v <= hi))
      c_.fail(key, "must lie in [" + format_number(lo) + ", " + format_number(hi) + "]");
    return v;
  }

  [[nodiscard]] double positive(const std::string& key, double fallback) const {
    const double v = c_.get<double>(key, fallback);
    if (!(v > 0.0)) c_.fail(key, "must be positive");
    return v;
  }

  [[nodiscard]] std::string choice(const std::string& key, const std::string& fallback,
                                   std::initializer_list<const char*> options) const {
    const auto v = c_.get<std::string>(key, fallback);
    for (auto o : options)
      if (v == o) return v;
    std::string list;
    for (auto o : options) list += std::string(list.empty() ? "" : ", ") + o;
    c_.fail(key, "must be one of: " + list);
  }

  [[nodiscard]] EnsembleSpec ensemble(Index n, const std::string& field_key = "field",
                                      const std::string& dist_key = "distribution") const {
    EnsembleSpec s;
    s.n = n;
    try {
      s.field = parse_field(c_.get<std::string>(field_key, "complex"));
    } catch (const Error& e) {
      c_.fail(field_key, e.what());
    }
    try {
      s.distribution = parse_distribution(c_.get<std::string>(dist_key, "gaussian"));
    } catch (const Error& e) {
      c_.fail(dist_key, e.what());
    }
    s.seed = c_.get<std::uint64_t>("seed", 0);
    return s;
  }

  [[nodiscard]] std::vector<cplx> zs(std::vector<cplx> fallback) const {
    auto v = c_.get<std::vector<cplx>>("z", std::move(fallback));
    for (auto z : v)
      if (!(std::abs(z) <= kMaxAbsZ)) c_.fail("z", "|z| must not exceed 10");
    return v;
  }

  [[nodiscard]] cplx single_z(cplx fallback) const {
    const auto v = zs({fallback});
    if (v.size() != 1) c_.fail("z", "this experiment takes a single z");
    return v.front();
  }

  [[nodiscard]] std::vector<double> etas(std::vector<double> fallback) const {
    auto v = c_.get<std::vector<double>>("eta", std::move(fallback));
    if (v.empty()) c_.fail("eta", "list must not be empty");
    for (double e : v)
      if (!(e > 0.0)) c_.fail("eta", "every eta must be positive");
    return v;
  }

  [[nodiscard]] std::vector<Index> sizes(Index n, Index lo, Index hi) const {
    const auto raw = c_.get<std::vector<std::uint64_t>>("sizes", {std::uint64_t(n)});
    if (raw.empty()) c_.fail("sizes", "list must not be empty");
    std::vector<Index> out;
    for (auto s : raw) {
      if (s < std::uint64_t(lo) || s > std::uint64_t(hi))
        c_.fail("sizes", "every size must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      out.push_back(static_cast<Index>(s));
    }
    return out;
  }

  [[nodiscard]] const Config& config() const { return c_; }

 private:
  const Config& c_;
  std::set<std::string> allowed_{"experiment", "N", "seed", "criteria", "output"};
};

/// Restricts gating to the configured criteria; unknown names are config errors.
inline void apply_gating(const Config& c, Result& r) {
  if (!c.has("criteria")) {
    for (auto& k : r.criteria) k.gating = !k.informational;
    return;
  }
  const auto names = c.get<std::vector<std::string>>("criteria", {});
  for (const auto& n : names)
    if (std::none_of(r.criteria.begin(), r.criteria.end(), [&](const Criterion& k) { return k.name == n; })) {
      std::string list;
      for (const auto& k : r.criteria) list += (list.empty() ? "" : ", ") + k.name;
      c.fail("criteria", "unknown criterion '" + n + "' (available: " + list + ")");
    }
  for (auto& k : r.criteria) k.gating = std::find(names.begin(), names.end(), k.name) != names.end();
}

inline RandomMatrix trial_matrix(const EnsembleSpec& spec, std::uint64_t stream, std::size_t trial) {
  return sample_iid(spec.with_seed(RngStream(spec.seed).substream({stream, trial}).key()));
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline Result run_mde_scan(const Config& c) {
  detail::Reader in(c);
  in.allow({"z", "z_max", "z_count", "eta", "eta_min", "eta_max", "eta_count", "envelope_factor"});
  in.check_unused("mde-scan");
  (void)in.N(1, std::numeric_limits<Index>::max());
  std::vector<double> radii;
  if (c.has("z")) {
    for (auto z : in.zs({})) radii.push_back(std::abs(z));
  } else {
    radii = detail::linspace(0.0, in.number("z_max", 1.5, 0.0, kMaxAbsZ), in.integer("z_count", 40, 1, 100000));
  }
  const auto etas = c.has("eta") ? in.etas({})
                                 : detail::logspace(in.positive("eta_min", 1e-8), in.positive("eta_max", 0.5),
                                                    in.integer("eta_count", 40, 1, 100000));
  const double F = in.number("envelope_factor", kEnvelopeFactor, 1.0, 1e12);

  Result r;
  r.table.columns = {"abs_z", "eta", "a", "u", "rho", "m_prime", "residual", "rho_envelope_ratio",
                     "m_prime_fd", "m_prime_fd_err_ratio", "m_prime_bound_ratio"};
  bool exact = true, env = true, fd_ok = true, bound_ok = true;
  double worst_res = 0.0, worst_env = 0.0, worst_fd = 0.0, worst_bound = 0.0;
  std::size_t bound_checked = 0;
  for (double rad : radii)
    for (double eta : etas) {
      const SpectralPoint p{rad, eta};
      const auto s = solve_mde(p);
      exact = exact && s.residual <= 1e-12 && s.a > 0.0 && s.u > 0.0 && s.u < 1.0;
      worst_res = std::max(worst_res, s.residual);

      double env_ratio = kNaN;
      if (eta < 1.0) {
        const auto e = rho_envelope(p, F);
        env_ratio = e.ratio(s.rho);
        env = env && e.contains(s.rho);
        worst_env = std::max(worst_env, env_ratio);
      }
      // Centered difference of a = Im m in eta; roundoff enters as eps a / h.
      const double h = 1e-3 * eta;
      const double fd = (solve_mde({rad, eta + h}).a - solve_mde({rad, eta - h}).a) / (2.0 * h);
      const double tol = 1e-4 * std::abs(fd) + 1e-6 + 8.0 * std::numeric_limits<double>::epsilon() * s.a / h;
      const double fd_ratio = std::abs(s.m_prime_trace - fd) / tol;
      fd_ok = fd_ok && fd_ratio <= 1.0;
      worst_fd = std::max(worst_fd, fd_ratio);

      double bound_ratio = kNaN;
      const double q = eta / s.rho;
      if (q <= 1e-2) {
        const double bound = (1.0 / (2.0 * s.rho * s.rho + q)) * (1.0 + 10.0 * q);
        bound_ratio = std::abs(s.m_prime_trace) / bound;
        bound_ok = bound_ok && bound_ratio <= 1.0;
        worst_bound = std::max(worst_bound, bound_ratio);
        ++bound_checked;
      }
      r.table.rows.push_back({rad, eta, s.a, s.u, s.rho, s.m_prime_trace, s.residual, env_ratio, fd, fd_ratio,
                              bound_ratio});
    }
  r.criteria.push_back({"mde_exact", exact, worst_res, "max residual; branch Im m > 0, 0 < u < 1"});
  r.criteria.push_back({"rho_envelope", env, worst_env, "max of rho/center and center/rho, factor " + format_number(F)});
  r.criteria.push_back({"m_prime_fd", fd_ok, worst_fd, "max |closed form - FD| / tolerance"});
  r.criteria.push_back({"m_prime_bound", bound_ok, worst_bound,
                        std::to_string(bound_checked) + " points with eta/rho <= 1e-2"});
  return r;
}

inline Result run_char_audit(const Config& c) {
  detail::Reader in(c);
  in.allow({"sizes", "z", "include_edge", "xi", "product_exponent", "envelope_factor", "steps", "pairs"});
  in.check_unused("char-audit");
  const Index n0 = in.N(2, Index(1) << 53);
  const auto sizes = in.sizes(n0, 2, Index(1) << 53);
  const double xi = in.number("xi", 0.01, 1e-12, 0.01);
  const double pexp = in.number("product_exponent", 0.25, 0.0, 1.0);
  const double F = in.number("envelope_factor", kEnvelopeFactor, 1.0, 1e12);
  const int steps = static_cast<int>(in.integer("steps", 512, 4, 1000000));
  const auto pairs = in.integer("pairs", 100, 0, 1000000);
  const bool edge = c.get<bool>("include_edge", true);
  const auto radii_z = in.zs({0.9, 1.0});
  RngStream rng(c.get<std::uint64_t>("seed", 0));

  Result r;
  r.table.columns = {"N", "abs_z", "eta_T", "rho_T", "item1_ratio", "item2_s1_ratio", "item2_s2_ratio",
                     "item3_total_ratio", "item3_s2_ratio", "item3_s1_ratio", "items_ok", "ordering", "S1", "S2",
                     "conservation_defect", "propagator_ratio", "t_star", "refined_ratio"};
  bool items = true, ordering = true, conserve = true, prop = true, refined = true;
  double worst_cons = 0.0, worst_prop = 0.0, worst_ref = 0.0;
  std::size_t refined_trajectories = 0;
  std::size_t row_index = 0;
  for (Index n : sizes) {
    const double N = static_cast<double>(n);
    std::vector<double> radii;
    for (auto z : radii_z) radii.push_back(std::abs(z));
    if (edge) radii.push_back(1.0 + std::pow(N, -10.0 * xi));
    const double A = std::pow(N, -pexp);
    for (double rad : radii) {
      const SpectralPoint end{rad, solve_eta_for_product(rad, A, ProductGate::relaxed)};
      const auto rep = check_lemma_chars(end, N, xi, F, steps);
      const double T = std::pow(N, -xi);
      const auto ch = integrate_backward(end, T, steps);
      const auto lm = landmark_times(ch, xi, N);
      const double defect = ch.conservation_defect();

      RngStream pr = rng.substream(row_index++);
      double prop_ratio = 0.0, ref_ratio = kNaN;
      if (lm.t_star > 0.0) {
        ref_ratio = 0.0;
        ++refined_trajectories;
      }
      for (std::uint64_t k = 0; k < pairs; ++k) {
        double s = T * pr.uniform(), t = T * pr.uniform();
        if (s > t) std::swap(s, t);
        const double p = propagator(ch, s, t);
        prop_ratio = std::max(prop_ratio, p / (2.5 * ch.at(s).eta / ch.at(t).eta));
        if (lm.t_star > 0.0) {
          const double b = 10.0 * ch.at(std::min(s, lm.t_star)).eta / ch.at(std::min(t, lm.t_star)).eta;
          ref_ratio = std::max(ref_ratio, p / b);
        }
      }
      const bool it = rep.item1 && rep.item2 && rep.item3;
      items = items && it;
      ordering = ordering && rep.ordering;
      conserve = conserve && defect <= 1e-8;
      prop = prop && prop_ratio <= 1.0;
      if (!std::isnan(ref_ratio)) refined = refined && ref_ratio <= 1.0;
      worst_cons = std::max(worst_cons, defect);
      worst_prop = std::max(worst_prop, prop_ratio);
      if (!std::isnan(ref_ratio)) worst_ref = std::max(worst_ref, ref_ratio);
      r.table.rows.push_back({N, rad, end.eta, solve_mde(end).rho, rep.item1_ratio, rep.item2_s1_ratio,
                              rep.item2_s2_ratio, rep.item3_total_ratio, rep.item3_s2_ratio, rep.item3_s1_ratio,
                              double(it), double(rep.ordering), rep.landmarks.S1, rep.landmarks.S2, defect,
                              prop_ratio, lm.t_star, ref_ratio});
    }
  }
  r.criteria.push_back({"lemma_items", items, 0.0, "items (i)-(iii) within factor " + format_number(F)});
  r.criteria.push_back({"ordering", ordering, 0.0,
                        ordering ? "S1 < S2 < T" : "S1 < S2 < T fails: needs N^{5 xi} > (log N)^3"});
  r.criteria.push_back({"conservation", conserve, worst_cons, "max relative drift of (eta/rho + 1) e^t, tol 1e-8"});
  r.criteria.push_back({"propagator", prop, worst_prop, "max p_{s,t} / (2.5 eta_s/eta_t)"});
  r.criteria.push_back({"propagator_refined", refined, worst_ref,
                        std::to_string(refined_trajectories) + " trajectories with t* > 0, C = 10"});
  return r;
}

inline Result run_locallaw_scan(const Config& c) {
  detail::Reader in(c);
  in.allow({"field", "distribution", "trials", "z", "eta_rule", "eta", "c", "C", "xi", "envelope_factor"});
  in.check_unused("locallaw-scan");
  const Index n = in.N(2, 2048);
  const auto spec = in.ensemble(n);
  const auto trials = in.integer("trials", 100, 1, 100000);
  const auto zs = in.zs({0.0, 0.5, 0.9});
  const auto rule_name = in.choice("eta_rule", "product", {"product", "fixed"});
  const EtaRule rule = rule_name == "product" ? EtaRule::product(in.positive("c", 200.0)) : EtaRule::fixed(in.etas({}));
  const DomainParams dp{in.number("C", 1.0, 1.0, 1e6), in.number("xi", 0.01, 1e-12, 0.01), n};
  const double F = in.positive("envelope_factor", 10.0);
  const double logN = std::log(double(n));

  Result r;
  r.table.columns = {"z_re", "z_im", "eta", "trial", "rho", "Z1_abs", "Z2_abs", "in_domain", "attainable"};
  std::size_t evaluated = 0, skipped = 0, z1_ok = 0, z2_ok = 0;
  double worst1 = 0.0, worst2 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto X = detail::trial_matrix(spec, 0, t);
    for (const auto& row : grid_scan(X, dp, zs, rule)) {
      if (row.skipped) {
        ++skipped;
        r.table.rows.push_back({row.z.real(), row.z.imag(), kNaN, double(t), kNaN, kNaN, kNaN, 0.0, 0.0});
        continue;
      }
      ++evaluated;
      const double a1 = std::abs(row.sample.Z1), a2 = std::abs(row.sample.Z2);
      z1_ok += a1 <= F * logN;
      z2_ok += a2 <= F * std::sqrt(logN);
      worst1 = std::max(worst1, a1 / (F * logN));
      worst2 = std::max(worst2, a2 / (F * std::sqrt(logN)));
      r.table.rows.push_back({row.z.real(), row.z.imag(), row.eta, double(t), row.sample.rho, a1, a2,
                              double(row.domain.all()), 1.0});
    }
  }
  const double f1 = evaluated ? double(z1_ok) / double(evaluated) : 0.0;
  const double f2 = evaluated ? double(z2_ok) / double(evaluated) : 0.0;
  const std::string why = skipped ? std::to_string(skipped) + " points unattainable (eta rho < 1 for every eta)" : "";
  r.criteria.push_back({"attainable", skipped == 0, double(skipped), why.empty() ? "all points evaluated" : why});
  r.criteria.push_back({"averaged_law", skipped == 0 && f1 >= 0.95, worst1,
                        "fraction within " + format_number(F) + " log N: " + format_number(f1)});
  r.criteria.push_back({"isotropic_law", skipped == 0 && f2 >= 0.95, worst2,
                        "fraction within " + format_number(F) + " sqrt(log N): " + format_number(f2)});
  return r;
}

namespace detail {

struct FlowSetup {
  EnsembleSpec spec;
  SpectralPoint end;
  double T = 0.0, dt = 0.0;
  std::size_t trials = 0;
};

inline FlowSetup flow_setup(Reader& in, std::size_t default_trials, double default_T, cplx default_z,
                            double default_eta) {
  const Config& c = in.config();
  FlowSetup s;
  s.spec = in.ensemble(in.N(2, 256));
  s.trials = in.integer("trials", default_trials, 1, 100000);
  s.end = {in.single_z(default_z), 0.0};
  const auto etas = in.etas({default_eta});
  if (etas.size() != 1) c.fail("eta", "this experiment takes a single eta_T");
  s.end.eta = etas.front();
  s.T = in.number("T", default_T, 1e-12, 1.0);
  s.dt = c.has("dt") ? in.number("dt", 0.0, 1e-12, kMaxOuStep) : default_flow_dt(s.T, s.end.eta);
  const double steps = std::round(s.T / s.dt);
  if (steps < 1 || std::abs(steps * s.dt - s.T) > 1e-9 * s.T) c.fail("dt", "must divide T");
  return s;
}

}  // namespace detail

inline Result run_flow_drift(const Config& c) {
  detail::Reader in(c);
  in.allow({"field", "distribution", "trials", "z", "eta", "T", "dt", "beta_term"});
  in.check_unused("flow-drift");
  const auto s = detail::flow_setup(in, 100, 0.02, 0.0, 0.1);
  const bool beta = c.get<bool>("beta_term", true);
  if (s.trials < 100) c.fail("trials", "drift consistency needs at least 100 trajectories");

  const auto ch = flow_characteristic(s.end, s.T, s.dt);
  const auto ens = simulate_flow_ensemble(s.spec, ch, s.dt, s.trials);
  DriftOptions main_opt, control_opt;
  main_opt.with_beta = beta;
  control_opt.with_beta = !beta;
  const auto rep = drift_consistency(ens, main_opt);
  const auto control = drift_consistency(ens, control_opt);
  const auto order = noise_off_order(detail::trial_matrix(s.spec, 2, 0), s.end, s.T, s.dt);
  const auto mm = martingale_means(ens);

  Result r;
  r.table.columns = {"t", "X1_re", "X1_im", "mean_fd_re", "mean_fd_im", "mean_drift_re", "mean_drift_im",
                     "mean_dev_re", "mean_dev_im", "se", "allowance", "sigmas", "pass", "mean_beta_re",
                     "mean_beta_im", "control_sigmas"};
  for (std::size_t k = 0; k < rep.points.size(); ++k) {
    const auto& p = rep.points[k];
    cplx x1 = 0.0;
    for (const auto& tr : ens) x1 += tr.records[k].X1;
    x1 /= double(ens.size());
    r.table.rows.push_back({p.t, x1.real(), x1.imag(), p.mean_fd.real(), p.mean_fd.imag(), p.mean_drift.real(),
                            p.mean_drift.imag(), p.mean_dev.real(), p.mean_dev.imag(), p.se, p.allowance, p.sigmas(),
                            double(p.pass()), p.mean_beta.real(), p.mean_beta.imag(), control.points[k].sigmas()});
  }
  r.criteria.push_back({"drift", rep.pass(), rep.max_sigmas(),
                        std::string(beta ? "with" : "without") + " beta term; max |dev| / SE"});
  r.criteria.push_back({"noise_off_order", order.order() >= 0.9, order.order(),
                        "observed order under dt halving, errors " + format_number(order.err_coarse) + " -> " +
                            format_number(order.err_fine)});
  Criterion ctl{"beta_control", !control.pass(), control.max_sigmas(),
                std::string("drift ") + (beta ? "without" : "with") + " beta term; beta power " +
                    format_number(rep.beta_power()),
                true};
  r.criteria.push_back(ctl);
  r.criteria.push_back({"martingale_means", mm.all_within(), mm.worst_sigmas,
                        std::to_string(mm.within) + "/" + std::to_string(mm.steps) + " steps within 3 SE", true});
  return r;
}

inline Result run_flow_qv(const Config& c) {
  detail::Reader in(c);
  in.allow({"field", "distribution", "trials", "z", "eta", "T", "dt", "window", "slack"});
  in.check_unused("flow-qv");
  const auto s = detail::flow_setup(in, 4, 0.064, 0.5, 0.3);
  const auto window = in.integer("window", 32, 1, 1000000);
  const double slack = in.number("slack", 5.0, 1.0, 1e12);

  const auto ch = flow_characteristic(s.end, s.T, s.dt);
  const auto ens = simulate_flow_ensemble(s.spec, ch, s.dt, s.trials);
  Result r;
  r.table.columns = {"t", "trial", "steps", "realized", "envelope", "realized_hat", "envelope_hat", "pass"};
  std::size_t windows = 0, passed = 0, violations = 0, checked = 0;
  double worst = 0.0, worst_hat = 0.0;
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const auto rep = qv_bound_check(ens[i], window, slack);
    violations += rep.integrand_violations;
    checked += rep.integrand_checked;
    worst = std::max(worst, rep.worst_integrand_ratio);
    worst_hat = std::max(worst_hat, rep.worst_integrand_ratio_hat);
    windows += rep.windows.size();
    passed += rep.windows_passed();
    for (const auto& w : rep.windows)
      r.table.rows.push_back({ens[i].records[w.first].t, double(i), double(w.steps), w.realized, w.envelope,
                              w.realized_hat, w.envelope_hat, double(w.pass())});
  }
  const double frac = windows ? double(passed) / double(windows) : 0.0;
  r.criteria.push_back({"qv_integrand", violations == 0, std::max(worst, worst_hat),
                        std::to_string(checked) + " gated steps, " + std::to_string(violations) + " violations"});
  r.criteria.push_back({"qv_windows", windows > 0 && frac >= 0.95, frac,
                        std::to_string(passed) + "/" + std::to_string(windows) + " windows within " +
                            format_number(slack) + "x envelope"});
  return r;
}

inline Result run_deloc(const Config& c) {
  detail::Reader in(c);
  in.allow({"sizes", "field", "distribution", "trials", "stat_cap", "growth_cap"});
  in.check_unused("deloc");
  const Index n0 = in.N(2, 2048);
  const auto sizes = in.sizes(n0, 2, 2048);
  auto spec = in.ensemble(n0);
  const auto trials = in.integer("trials", 20, 1, 100000);
  const double cap = in.positive("stat_cap", 5.0);
  const double growth_cap = in.positive("growth_cap", 0.2);

  Result r;
  r.table.columns = {"N", "trial", "haar", "statistic", "rejected"};
  bool under_cap[2] = {true, true};
  double worst_stat[2] = {0.0, 0.0};
  std::vector<double> first_median(2), last_median(2);
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    spec.n = sizes[si];
    const auto tr = deloc_trials(spec, trials);
    for (int b = 0; b < 2; ++b) {
      const auto& set = b ? tr.haar : tr.coordinate;
      for (std::size_t t = 0; t < set.size(); ++t) {
        const auto& rep = set[t];
        under_cap[b] = under_cap[b] && rep.statistic <= cap && rep.rejected == 0;
        worst_stat[b] = std::max(worst_stat[b], rep.statistic);
        r.table.rows.push_back({double(sizes[si]), double(t), double(b), rep.statistic, double(rep.rejected)});
      }
      const double med = stats::median(DelocTrials::statistics(set));
      if (si == 0) first_median[b] = med;
      last_median[b] = med;
    }
  }
  const double growth = std::max(last_median[0] / first_median[0], last_median[1] / first_median[1]) - 1.0;
  r.criteria.push_back({"stat_cap_coordinate", under_cap[0], worst_stat[0],
                        "statistic <= " + format_number(cap) + " in every trial, no rejected eigenpairs"});
  r.criteria.push_back({"stat_cap_haar", under_cap[1], worst_stat[1], "same under a Haar probe basis"});
  r.criteria.push_back({"median_growth", growth <= growth_cap, growth,
                        "median growth from N = " + std::to_string(sizes.front()) + " to " +
                            std::to_string(sizes.back()) + " (worst basis)"});
  return r;
}

inline Result run_impbound(const Config& c) {
  detail::Reader in(c);
  in.allow({"field", "distribution", "trials", "C", "eta_rule", "eta"});
  in.check_unused("impbound");
  const Index n = in.N(1, 1024);
  const auto spec = in.ensemble(n);
  const auto trials = in.integer("trials", 10, 1, 100000);
  const double C = in.number("C", 1.0, 1.0, 1e6);
  const auto rule = in.choice("eta_rule", "product", {"product", "fixed"});
  std::vector<double> etas{0.0};
  if (rule == "fixed") etas = in.etas({});

  Result r;
  r.table.columns = {"sigma_re", "sigma_im", "eta", "trial", "lhs_right", "rhs_right", "lhs_left", "rhs_left",
                     "violation", "attainable"};
  std::size_t checked = 0, unattainable = 0, violations = 0, rejected = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto X = detail::trial_matrix(spec, 0, t);
    RngStream pr = RngStream(spec.seed).substream({2, t});
    const CVector x1 = Probe::random(n, pr).v.tail(n).normalized();
    const auto d = eigen_decompose(X);
    rejected += d.rejected.size();
    for (const auto& p : d.pairs)
      for (double eta : etas) {
        const EtaChoice choice = rule == "fixed" ? EtaChoice::fixed(eta) : EtaChoice::relaxed();
        try {
          const auto rep = spectral_bound_check(X.entries, p, x1, C, choice, d.norm);
          ++checked;
          violations += !rep.holds();
          worst = std::max(worst, rep.violation());
          r.table.rows.push_back({p.sigma.real(), p.sigma.imag(), rep.eta, double(t), rep.lhs_right, rep.rhs_right,
                                  rep.lhs_left, rep.rhs_left, rep.violation(), 1.0});
        } catch (const OutOfRangeError&) {
          ++unattainable;
          r.table.rows.push_back({p.sigma.real(), p.sigma.imag(), kNaN, double(t), kNaN, kNaN, kNaN, kNaN, kNaN, 0.0});
        }
      }
  }
  const double A = 100.0 * C * C * std::log(double(n)) / double(n);
  r.criteria.push_back({"attainable", unattainable == 0, double(unattainable),
                        unattainable ? std::to_string(unattainable) + " eigenvalues with target eta rho = " +
                                           format_number(A) + " >= 1, which no eta attains"
                                     : "all eigenvalues evaluated"});
  r.criteria.push_back({"spectral_bound", checked > 0 && violations == 0 && rejected == 0, worst,
                        std::to_string(checked) + " checks, " + std::to_string(violations) + " violations, " +
                            std::to_string(rejected) + " rejected eigenpairs; tolerance 1e-9"});
  return r;
}

inline Result run_ensemble_compare(const Config& c) {
  detail::Reader in(c);
  in.allow({"field", "distribution", "field_b", "distribution_b", "variance_b", "seed_b", "trials", "z", "c",
            "ks_cap", "expect"});
  in.check_unused("ensemble-compare");
  const Index n = in.N(2, 2048);
  const auto a = in.ensemble(n);
  auto b = in.ensemble(n, c.has("field_b") ? "field_b" : "field",
                       c.has("distribution_b") ? "distribution_b" : "distribution");
  b.variance = in.positive("variance_b", 1.0);
  b.seed = c.get<std::uint64_t>("seed_b", a.seed);
  const auto trials = in.integer("trials", 200, 2, 1000000);
  ComparisonOptions opt;
  opt.z = in.single_z(0.0);
  opt.c = in.positive("c", 10.0);
  const double cap = in.number("ks_cap", 0.2, 0.0, 1.0);
  const auto expect = in.choice("expect", "same", {"same", "different"});

  const auto rep = ensemble_comparison(a, b, trials, opt);
  Result r;
  r.table.columns = {"trial", "z1_a", "z1_b", "z2_a", "z2_b"};
  for (std::size_t t = 0; t < rep.z1_a.size(); ++t)
    r.table.rows.push_back({double(t), rep.z1_a[t], rep.z1_b[t], rep.z2_a[t], rep.z2_b[t]});
  const bool ok = expect == "same" ? rep.ks() <= cap : rep.ks_z1 > cap;
  r.criteria.push_back({"ks", ok, expect == "same" ? rep.ks() : rep.ks_z1,
                        "KS z1 " + format_number(rep.ks_z1) + ", z2 " + format_number(rep.ks_z2) +
                            (expect == "same" ? "; expect <= " : "; expect z1 > ") + format_number(cap)});
  return r;
}

inline const std::vector<std::pair<std::string, std::function<Result(const Config&)>>>& experiments() {
  static const std::vector<std::pair<std::string, std::function<Result(const Config&)>>> table{
      {"mde-scan", run_mde_scan},         {"char-audit", run_char_audit}, {"locallaw-scan", run_locallaw_scan},
      {"flow-drift", run_flow_drift},     {"flow-qv", run_flow_qv},       {"deloc", run_deloc},
      {"impbound", run_impbound},         {"ensemble-compare", run_ensemble_compare},
  };
  return table;
}

/// Validates and runs the configured experiment. Library argument errors
/// surface as ConfigError, numerical failures as ModuleError.
inline Result run(const Config& c) {
  const auto name = c.require_key<std::string>("experiment");
  (void)c.require_key<std::uint64_t>("N");
  for (const auto& [key, fn] : experiments()) {
    if (key != name) continue;
    Result r;
    try {
      r = fn(c);
    } catch (const ConfigError&) {
      throw;
    } catch (const NumericalError& e) {
      throw ModuleError(name, e.what());
    } catch (const Error& e) {
      throw ConfigError("experiment '" + name + "' rejected the configuration: " + std::string(e.what()));
    }
    r.experiment = name;
    detail::apply_gating(c, r);
    return r;
  }
  std::string list;
  for (const auto& [key, fn] : experiments()) list += (list.empty() ? "" : ", ") + key;
  c.fail("experiment", "unknown experiment '" + name + "' (available: " + list + ")");
}

}  // namespace rmtlab::cli
