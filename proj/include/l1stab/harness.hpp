#pragma once
// Scenario files, paired-run experiments, ensembles and reports.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>
#include <set>
#include <thread>
#include <variant>

#include "json.hpp"
#include "l1stab/weight_builder.hpp"

namespace l1stab {

using Model = std::variant<ScalarFlux, PSystem>;

// one initial datum
struct DataSpec {
  std::string kind = "random";  // random | piecewise | shift
  int jumps = 6;
  double a = -2, b = 2;
  std::vector<double> base;
  double amplitude = 1, tv = 2;
  std::uint64_t seed_offset = 0;
  std::vector<double> breakpoints;
  std::vector<std::vector<double>> values;
  double dx = 0;  // shift: the first datum translated by dx
};

struct Caps {
  double c1 = 20;  // sup norms plus total variations of both data
  double amplitude = 2;
  double tv = 4;
};

struct MonotonicitySpec {
  double u_minus = 1, probe = 0.3, lo = -2, hi = 2;
  int family = 1;
  int samples = 100;
  bool expect_monotone = true;
};

struct Scenario {
  std::string name = "scenario";
  std::string experiment = "pair_stability";  // pair_stability | census | identity_fuzz | weight_audit | monotonicity
  std::string flux;
  Model model = ScalarFlux::burgers();
  int n = 1;
  std::array<DataSpec, 2> data;
  double h = 0.05;
  int h_levels = 1;
  double t_end = 0;
  int seeds = 1;
  std::uint64_t seed0 = 1;
  double kappa1 = 0.1, kappa2 = 0.1, K = 10;
  Caps caps;
  std::map<std::string, double> tol;
  int fuzz = 10000;
  MonotonicitySpec mono;
  nlohmann::json echo;

  double tolerance(const std::string& k) const { return tol.at(k); }
};

inline std::map<std::string, double> default_tolerances() {
  return {{"jump", 1e-12},          {"fd", 1e-8},          {"excess", 1e-9},   {"identity", 1e-10},
          {"c2_variation", 0.2},    {"cemp_variation", 0.2}, {"shift_ratio", 1e-10}};
}

inline int verbosity() {
  const char* v = std::getenv("L1STAB_VERBOSE");
  return v ? std::atoi(v) : 0;
}

namespace detail {

[[noreturn]] inline void bad(const std::string& path, const std::string& what) {
  throw ValidationError(path + ": " + what);
}

template <class T>
T get(const nlohmann::json& j, const std::string& key, const std::string& path, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad(path + "." + key, "wrong type");
  }
}

// "plaw_pressure gamma=1.4 kappa=1" -> name and parameters
inline std::pair<std::string, std::map<std::string, double>> split_flux(const std::string& s, const std::string& path) {
  std::istringstream is(s);
  std::string name, tok;
  is >> name;
  std::map<std::string, double> par;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) bad(path, "parameter '" + tok + "' is not key=value");
    try {
      par[tok.substr(0, eq)] = std::stod(tok.substr(eq + 1));
    } catch (const std::exception&) {
      bad(path, "parameter '" + tok + "' has a non-numeric value");
    }
  }
  return {name, par};
}

inline Model make_model(const nlohmann::json& mj, const std::string& path) {
  if (!mj.is_object()) bad(path, "must be an object");
  if (!mj.contains("flux")) bad(path + ".flux", "missing");
  auto [name, par] = split_flux(get<std::string>(mj, "flux", path, ""), path + ".flux");
  std::vector<double> dom = get<std::vector<double>>(mj, "domain", path, {});
  if (!dom.empty() && (dom.size() != 2 || !(dom[0] < dom[1]))) bad(path + ".domain", "must be [lo, hi] with lo < hi");
  auto p = [&](const std::string& k, double d) { return par.count(k) ? par[k] : d; };
  try {
    if (name == "burgers") return dom.empty() ? ScalarFlux::burgers() : ScalarFlux::burgers(dom[0], dom[1]);
    if (name == "cubic") return dom.empty() ? ScalarFlux::cubic() : ScalarFlux::cubic(dom[0], dom[1]);
    if (name == "piecewise_cubic") {
      if (!mj.contains("segments")) bad(path + ".segments", "missing for piecewise_cubic");
      std::vector<ScalarFlux::Segment> segs;
      const auto& sj = mj.at("segments");
      for (std::size_t i = 0; i < sj.size(); ++i) {
        std::vector<double> row;
        try {
          row = sj[i].get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
          bad(path + ".segments[" + std::to_string(i) + "]", "must be an array of numbers");
        }
        if (row.size() != 6) bad(path + ".segments[" + std::to_string(i) + "]", "needs [x0, x1, a, b, c, d]");
        segs.push_back({row[0], row[1], row[2], row[3], row[4], row[5]});
      }
      return ScalarFlux::piecewise_cubic(segs);
    }
    double lo = dom.empty() ? 0.05 : dom[0], hi = dom.empty() ? 20 : dom[1];
    if (name == "plaw_pressure") return PSystem(PressureLaw::power(p("gamma", 1.0), p("kappa", 1.0)), lo, hi);
    if (name == "linear_pressure") return PSystem(PressureLaw::linear(p("slope", 1.0)), lo, hi);
  } catch (const ModelError& e) {
    bad(path, e.what());
  }
  bad(path + ".flux", "unknown flux law '" + name + "'");
}

inline DataSpec parse_data(const nlohmann::json& j, const std::string& path, int n) {
  if (!j.is_object()) bad(path, "must be an object");
  DataSpec d;
  d.kind = get<std::string>(j, "kind", path, "random");
  if (d.kind == "random") {
    d.jumps = get<int>(j, "jumps", path, 6);
    d.a = get<double>(j, "a", path, -2);
    d.b = get<double>(j, "b", path, 2);
    d.base = get<std::vector<double>>(j, "base", path, n == 1 ? std::vector<double>{0.0} : std::vector<double>{0.0, 1.0});
    d.amplitude = get<double>(j, "amplitude", path, 1.0);
    d.tv = get<double>(j, "tv", path, 2.0);
    d.seed_offset = get<std::uint64_t>(j, "seed_offset", path, 0);
    if (d.jumps < 2) bad(path + ".jumps", "must be at least 2");
    if (!(d.a < d.b)) bad(path + ".b", "must exceed a");
    if (static_cast<int>(d.base.size()) != n) bad(path + ".base", "needs " + std::to_string(n) + " components");
    if (!(d.amplitude >= 0)) bad(path + ".amplitude", "must be nonnegative");
    if (!(d.tv > 0)) bad(path + ".tv", "must be positive");
  } else if (d.kind == "piecewise") {
    if (!j.contains("values")) bad(path + ".values", "missing");
    d.breakpoints = get<std::vector<double>>(j, "breakpoints", path, {});
    const auto& vj = j.at("values");
    if (!vj.is_array()) bad(path + ".values", "must be an array");
    for (std::size_t i = 0; i < vj.size(); ++i) {
      std::vector<double> v;
      try {
        v = vj[i].is_number() ? std::vector<double>{vj[i].get<double>()} : vj[i].get<std::vector<double>>();
      } catch (const nlohmann::json::exception&) {
        bad(path + ".values[" + std::to_string(i) + "]", "must be a number or an array of numbers");
      }
      if (static_cast<int>(v.size()) != n)
        bad(path + ".values[" + std::to_string(i) + "]", "needs " + std::to_string(n) + " components");
      d.values.push_back(v);
    }
    if (d.values.size() != d.breakpoints.size() + 1) bad(path + ".values", "needs one more entry than breakpoints");
    for (std::size_t i = 0; i + 1 < d.breakpoints.size(); ++i)
      if (!(d.breakpoints[i] < d.breakpoints[i + 1])) bad(path + ".breakpoints", "must be strictly increasing");
  } else if (d.kind == "shift") {
    if (!j.contains("dx")) bad(path + ".dx", "missing");
    d.dx = get<double>(j, "dx", path, 0.0);
  } else {
    bad(path + ".kind", "unknown kind '" + d.kind + "'");
  }
  return d;
}

// componentwise range and a bound on sup norm + total variation
template <int N>
void data_bounds(const DataSpec& d, const DataSpec& first, Vec<N>& lo, Vec<N>& hi, double& sup_tv) {
  const DataSpec& s = d.kind == "shift" ? first : d;
  lo.fill(kInf);
  hi.fill(-kInf);
  if (s.kind == "random") {
    for (int c = 0; c < N; ++c) {
      lo[c] = s.base[c] - s.amplitude;
      hi[c] = s.base[c] + s.amplitude;
    }
    double sup = 0;
    for (int c = 0; c < N; ++c) sup += std::abs(s.base[c]) + s.amplitude;
    sup_tv = sup + s.tv;
  } else {
    double sup = 0, tv = 0;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      double nv = 0;
      for (int c = 0; c < N; ++c) {
        lo[c] = std::min(lo[c], s.values[i][c]);
        hi[c] = std::max(hi[c], s.values[i][c]);
        nv += std::abs(s.values[i][c]);
        if (i > 0) tv += std::abs(s.values[i][c] - s.values[i - 1][c]);
      }
      sup = std::max(sup, nv);
    }
    sup_tv = sup + tv;
  }
}

template <class M>
void validate_model_range(const Scenario& sc, const M& m) {
  constexpr int N = M::N;
  Vec<N> lo0, hi0, lo1, hi1;
  double st0 = 0, st1 = 0;
  data_bounds<N>(sc.data[0], sc.data[0], lo0, hi0, st0);
  data_bounds<N>(sc.data[1], sc.data[0], lo1, hi1, st1);
  Vec<N> lo, hi;
  for (int c = 0; c < N; ++c) {
    lo[c] = std::min(lo0[c], lo1[c]) - sc.h;
    hi[c] = std::max(hi0[c], hi1[c]) + sc.h;
  }
  for (int k = 0; k < 2; ++k) {
    const auto& d = sc.data[k].kind == "shift" ? sc.data[0] : sc.data[k];
    std::string path = "scenario.initial[" + std::to_string(k) + "]";
    if (d.kind == "random" && d.amplitude > sc.caps.amplitude) bad(path + ".amplitude", "above the amplitude cap");
    if (d.kind == "random" && d.tv > sc.caps.tv) bad(path + ".tv", "TV over cap");
  }
  if (st0 + st1 > sc.caps.c1) bad("scenario.initial", "sup norms plus TV over cap c1");
  // averaged eigenvalue bands over a sample of the state range
  std::vector<Vec<N>> states;
  int q = N == 1 ? 33 : 9;
  if constexpr (N == 1) {
    for (int k = 0; k < q; ++k) states.push_back({lo[0] + (hi[0] - lo[0]) * k / (q - 1.0)});
  } else {
    for (int a = 0; a < q; ++a)
      for (int b = 0; b < q; ++b)
        states.push_back({lo[0] + (hi[0] - lo[0]) * a / (q - 1.0), lo[1] + (hi[1] - lo[1]) * b / (q - 1.0)});
  }
  if constexpr (N == 1) {
    for (const auto& s : states)
      if (s[0] < m.lo() || s[0] > m.hi()) bad("scenario.initial", "state range leaves the flux domain");
  } else {
    if (lo[1] <= m.vlo() || hi[1] >= m.vhi()) bad("scenario.initial", "specific volume range leaves the pressure domain");
    auto band = scan_bands(m, states, 1e-6);
    if (!band.separated) {
      std::ostringstream os;
      os << "eigenvalue separation: bands come within " << band.min_gap << " (floor 1e-6)";
      bad("scenario.model", os.str());
    }
    // v -> infinity is the vacuum; the guard matches the density floor 1e-3
    if (hi[1] > 1e3) bad("scenario.initial", "vacuum proximity: specific volume above 1e3");
  }
}

}  // namespace detail

inline Scenario parse_scenario(const nlohmann::json& j) {
  using detail::bad;
  using detail::get;
  const std::string P = "scenario";
  if (!j.is_object()) bad(P, "must be a JSON object");
  Scenario sc;
  sc.echo = j;
  sc.name = get<std::string>(j, "name", P, "scenario");
  sc.experiment = get<std::string>(j, "experiment", P, "pair_stability");
  static const std::set<std::string> kinds{"pair_stability", "census", "identity_fuzz", "weight_audit", "monotonicity"};
  if (!kinds.count(sc.experiment)) bad(P + ".experiment", "unknown experiment '" + sc.experiment + "'");
  if (!j.contains("model")) bad(P + ".model", "missing");
  sc.model = detail::make_model(j.at("model"), P + ".model");
  sc.flux = j.at("model").at("flux").get<std::string>();
  sc.n = std::holds_alternative<ScalarFlux>(sc.model) ? 1 : 2;
  sc.h = get<double>(j, "h", P, 0.05);
  if (!(sc.h > 0)) bad(P + ".h", "must be positive");
  sc.h_levels = get<int>(j, "h_levels", P, 1);
  if (sc.h_levels < 1 || sc.h_levels > 8) bad(P + ".h_levels", "must be in 1..8");
  sc.seeds = get<int>(j, "seeds", P, 1);
  if (sc.seeds < 1) bad(P + ".seeds", "must be at least 1");
  sc.seed0 = get<std::uint64_t>(j, "seed0", P, 1);
  sc.kappa1 = get<double>(j, "kappa1", P, 0.1);
  sc.kappa2 = get<double>(j, "kappa2", P, 0.1);
  sc.K = get<double>(j, "K", P, 10.0);
  if (!(sc.kappa1 > 0)) bad(P + ".kappa1", "must be positive");
  if (!(sc.kappa2 > 0)) bad(P + ".kappa2", "must be positive");
  if (!(sc.K >= 0)) bad(P + ".K", "must be nonnegative");
  sc.fuzz = get<int>(j, "fuzz", P, 10000);
  sc.tol = default_tolerances();
  if (j.contains("tolerances")) {
    for (const auto& [k, v] : j.at("tolerances").items()) {
      if (!sc.tol.count(k)) bad(P + ".tolerances." + k, "unknown tolerance");
      if (!v.is_number()) bad(P + ".tolerances." + k, "must be a number");
      sc.tol[k] = v.get<double>();
    }
  }
  if (j.contains("caps")) {
    const auto& c = j.at("caps");
    sc.caps.c1 = get<double>(c, "c1", P + ".caps", sc.caps.c1);
    sc.caps.amplitude = get<double>(c, "amplitude", P + ".caps", sc.caps.amplitude);
    sc.caps.tv = get<double>(c, "tv", P + ".caps", sc.caps.tv);
  }
  if (sc.experiment == "monotonicity") {
    const auto& mj = j.contains("monotonicity") ? j.at("monotonicity") : nlohmann::json::object();
    std::string mp = P + ".monotonicity";
    sc.mono.u_minus = get<double>(mj, "u_minus", mp, 1.0);
    sc.mono.probe = get<double>(mj, "probe", mp, 0.3);
    sc.mono.lo = get<double>(mj, "lo", mp, -2.0);
    sc.mono.hi = get<double>(mj, "hi", mp, 2.0);
    sc.mono.family = get<int>(mj, "family", mp, 1);
    sc.mono.samples = get<int>(mj, "samples", mp, 100);
    sc.mono.expect_monotone = get<bool>(mj, "expect_monotone", mp, true);
    if (!(sc.mono.lo < sc.mono.hi)) bad(mp + ".hi", "must exceed lo");
    return sc;
  }
  if (sc.experiment == "identity_fuzz") return sc;
  if (!j.contains("t_end")) bad(P + ".t_end", "missing (required)");
  sc.t_end = get<double>(j, "t_end", P, 0.0);
  if (!(sc.t_end > 0)) bad(P + ".t_end", "must be positive");
  if (!j.contains("initial")) bad(P + ".initial", "missing");
  const auto& ij = j.at("initial");
  if (!ij.is_array() || ij.size() != 2) bad(P + ".initial", "must list exactly two data");
  for (int k = 0; k < 2; ++k)
    sc.data[static_cast<std::size_t>(k)] = detail::parse_data(ij[static_cast<std::size_t>(k)], P + ".initial[" + std::to_string(k) + "]", sc.n);
  if (sc.data[0].kind == "shift") bad(P + ".initial[0].kind", "the first datum cannot be a shift");
  std::visit([&](const auto& m) { detail::validate_model_range(sc, m); }, sc.model);
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path + ": cannot open scenario file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + e.what());
  }
  return parse_scenario(j);
}

// ---------------------------------------------------------------- single pair

template <int N>
InitialSpec<N> initial_spec(const Scenario& sc, int which, std::uint64_t seed) {
  const DataSpec& d = sc.data[static_cast<std::size_t>(which)];
  if (d.kind == "shift") {
    auto s = initial_spec<N>(sc, 0, seed);
    for (auto& x : s.breakpoints) x += d.dx;
    return s;
  }
  if (d.kind == "random") {
    Vec<N> base;
    for (int c = 0; c < N; ++c) base[c] = d.base[static_cast<std::size_t>(c)];
    return random_profile<N>(seed + d.seed_offset, d.jumps, d.a, d.b, base, d.amplitude, d.tv);
  }
  InitialSpec<N> s;
  s.breakpoints = d.breakpoints;
  for (const auto& v : d.values) {
    Vec<N> x;
    for (int c = 0; c < N; ++c) x[c] = v[static_cast<std::size_t>(c)];
    s.values.push_back(x);
  }
  return s;
}

struct Concordance {
  int checked = 0, agree = 0;
  int robust_checked = 0, robust_agree = 0;
};

// closed-form sign tables against the direct three-way classification, single-owner records only
template <class M>
Concordance classification_concordance(const M& m, const AveragedField<M::N>& F) {
  Concordance c;
  for (const auto& r : F.records) {
    if (r.cls == ShockClass::Degenerate || r.owner == 3) continue;
    bool own = r.owner == 1;
    auto um = own ? r.u_m : r.up_m, up = own ? r.u_p : r.up_p, probe = own ? r.up_m : r.u_m;
    if constexpr (M::N == 1) {
      if (um[0] == up[0]) continue;
      ++c.checked;
      c.agree += classify_scalar_rho(um[0], up[0], probe[0], m).predicted == r.cls;
    } else {
      if (um[1] == up[1]) continue;
      ++c.checked;
      c.agree += classify_psystem_rho(um[1], up[1], probe[1], r.family, m).predicted == r.cls;
    }
    auto v = robust_classification(r);
    if (v.applicable) {
      ++c.robust_checked;
      c.robust_agree += v.agrees;
    }
  }
  return c;
}

struct PairResult {
  std::uint64_t seed = 0;
  double h = 0;
  bool ok = true;
  std::string error;
  long events = 0;
  int records = 0;
  double tv0 = 0, tv1 = 0;
  // L1 distance
  double l1_0 = 0, l1_max = 0, ratio = 1;
  std::vector<std::pair<double, double>> l1;
  Census census;
  Concordance concord;
  // weight
  double w_min = 1, w_max = 1, C2 = 1, osc = 0, osc_const = 0;
  double jump_error = 0;
  int jump_checked = 0, jump_violations = 0;
  int constraint_violations = 0, bridge_sign_bad = 0;
  int tracer_mismatches = 0;
  double tracer_coverage = 1;
  // ledger
  double fd_error = 0, excess = 0, overshoot = 0, budget = 0, norm0 = 0, norm_max = 0, vertex_jump = 0;
  double lax_dissipation = 0, under_dissipation = 0;
  double c_empirical = 0, c_bound = 0;
  bool stability_holds = true;
  std::string ledger_csv, weight_csv, records_csv;
};

template <class M>
PairResult run_pair_once(const Scenario& sc, const M& m, std::uint64_t seed, double h, bool keep_csv) {
  constexpr int N = M::N;
  PairResult R;
  R.seed = seed;
  R.h = h;
  try {
    auto a = evolve(m, discretize_initial(initial_spec<N>(sc, 0, seed), h), h, sc.t_end, seed);
    auto b = evolve(m, discretize_initial(initial_spec<N>(sc, 1, seed), h), h, sc.t_end, seed);
    R.events = static_cast<long>(a.events.size() + b.events.size());
    R.tv0 = total_variation(a.initial);
    R.tv1 = total_variation(b.initial);
    auto F = build_averaged_field(m, a, b, sc.kappa1, sc.kappa2);
    R.records = static_cast<int>(F.records.size());
    R.census = rarefaction_census(F);
    R.concord = classification_concordance(m, F);
    R.l1 = l1_series(F);
    R.l1_0 = R.l1.front().second;
    for (const auto& [t, v] : R.l1) R.l1_max = std::max(R.l1_max, v);
    R.ratio = R.l1_0 > 0 ? R.l1_max / R.l1_0 : 1.0;
    if (sc.experiment == "census") return R;
    WeightField<N> W;
    if constexpr (N == 1) {
      W = build_weight_scalar(F, sc.K);
    } else {
      W = build_weight_system(F, sc.K);
    }
    R.w_min = W.w_min;
    R.w_max = W.w_max;
    R.C2 = W.C2;
    R.osc = W.osc;
    double tvs = R.tv0 + R.tv1 + R.tv0 * R.tv1;
    R.osc_const = tvs > 0 ? W.osc / tvs : 0.0;
    auto ja = audit_jumps(W);
    R.jump_error = ja.max_error;
    R.jump_checked = ja.checked;
    R.jump_violations = ja.violations;
    auto ca = check_weight_constraints(W, sc.K);
    R.constraint_violations = ca.violations();
    R.bridge_sign_bad = ca.bridge_sign_bad;
    if (sc.experiment == "weight_audit") {
      for (int j = 0; j < N; ++j) {
        auto tr = backward_characteristics(W, j);
        R.tracer_mismatches += tr.mismatches;
        R.tracer_coverage = std::min(R.tracer_coverage, tr.coverage());
      }
    }
    auto D = norm_derivative_ledger(W);
    R.fd_error = D.max_fd_error;
    R.excess = D.max_excess;
    R.overshoot = D.overshoot;
    R.budget = D.budget_total;
    R.norm0 = D.norm0;
    R.norm_max = D.norm_max;
    R.vertex_jump = D.max_vertex_jump;
    R.lax_dissipation = D.lax_dissipation;
    R.under_dissipation = D.under_dissipation;
    auto v = stability_estimate_check(W, D);
    R.c_empirical = v.c_empirical;
    R.c_bound = v.c_bound;
    R.stability_holds = v.holds;
    if (keep_csv) {
      R.ledger_csv = ledger_csv(D);
      R.weight_csv = weight_csv(W);
      R.records_csv = records_csv(F);
    }
  } catch (const std::exception& e) {
    R.ok = false;
    R.error = e.what();
  }
  return R;
}

// ---------------------------------------------------------------- reports

struct Assertion {
  std::string name;
  double measured = 0, tolerance = 0;
  std::string relation = "<=";  // measured relation tolerance
  bool pass = false;
};

inline Assertion make_assertion(std::string name, double measured, std::string rel, double tol) {
  Assertion a{std::move(name), measured, tol, rel, false};
  if (rel == "<=") a.pass = measured <= tol;
  else if (rel == ">=") a.pass = measured >= tol;
  else if (rel == "==") a.pass = measured == tol;
  else if (rel == "<") a.pass = measured < tol;
  else if (rel == ">") a.pass = measured > tol;
  return a;
}

struct LevelSummary {
  double h = 0;
  int seeds = 0, failed = 0;
  double ratio_max = 0, c_emp_max = 0, c2_max = 0, osc_const_max = 0, osc_const_median = 0;
  double overshoot = 0, budget = 0;  // summed over seeds, each relative to its initial norm
  double fd_error = 0, excess = 0, jump_error = 0, vertex_jump = 0;
  double min_dissipation = 0;
  int jump_violations = 0, constraint_violations = 0, stability_failures = 0, tracer_mismatches = 0;
  double tracer_coverage = 1;
  long events = 0;
  int records = 0;
  int census_violations = 0, raref_on_shocks = 0, raref_class = 0;
  double raref_strength = 0;
  Concordance concord;
};

struct RunReport {
  nlohmann::json scenario;
  std::string experiment;
  std::vector<LevelSummary> levels;
  std::vector<std::vector<PairResult>> results;  // [level][seed]
  nlohmann::json extra = nlohmann::json::object();
  std::vector<Assertion> assertions;
  std::vector<std::string> errors;
  bool pass() const {
    for (const auto& a : assertions)
      if (!a.pass) return false;
    return true;
  }
};

inline LevelSummary summarize(const std::vector<PairResult>& rs, double h) {
  LevelSummary L;
  L.h = h;
  std::vector<double> oc;
  for (const auto& r : rs) {
    ++L.seeds;
    if (!r.ok) {
      ++L.failed;
      continue;
    }
    L.ratio_max = std::max(L.ratio_max, r.ratio);
    L.c_emp_max = std::max(L.c_emp_max, r.c_empirical);
    L.c2_max = std::max(L.c2_max, r.C2);
    L.osc_const_max = std::max(L.osc_const_max, r.osc_const);
    oc.push_back(r.osc_const);
    if (r.norm0 > 0) {
      L.overshoot += r.overshoot / r.norm0;
      L.budget += r.budget / r.norm0;
    }
    L.fd_error = std::max(L.fd_error, r.fd_error);
    L.excess = std::max(L.excess, r.excess);
    L.jump_error = std::max(L.jump_error, r.jump_error);
    L.vertex_jump = std::max(L.vertex_jump, r.vertex_jump);
    L.min_dissipation = std::min({L.min_dissipation, r.lax_dissipation, r.under_dissipation});
    L.jump_violations += r.jump_violations;
    L.constraint_violations += r.constraint_violations;
    L.stability_failures += !r.stability_holds;
    L.tracer_mismatches += r.tracer_mismatches;
    L.tracer_coverage = std::min(L.tracer_coverage, r.tracer_coverage);
    L.events += r.events;
    L.records += r.records;
    L.census_violations += r.census.violations;
    L.raref_on_shocks += r.census.rarefaction_class_on_shocks;
    L.raref_class += r.census.rarefaction_class;
    L.raref_strength = std::max(L.raref_strength, r.census.max_rarefaction_strength);
    L.concord.checked += r.concord.checked;
    L.concord.agree += r.concord.agree;
    L.concord.robust_checked += r.concord.robust_checked;
    L.concord.robust_agree += r.concord.robust_agree;
  }
  if (!oc.empty()) {
    std::sort(oc.begin(), oc.end());
    L.osc_const_median = oc[oc.size() / 2];
  }
  return L;
}

// spread (max - min) / min of a positive series
inline double relative_spread(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
  return lo > 0 ? (hi - lo) / lo : (hi > 0 ? kInf : 0.0);
}

namespace detail {

inline void pair_assertions(const Scenario& sc, RunReport& R) {
  auto add = [&](std::string n, double m, std::string rel, double tol) {
    R.assertions.push_back(make_assertion(std::move(n), m, std::move(rel), tol));
  };
  std::vector<double> c2, cemp;
  for (std::size_t k = 0; k < R.levels.size(); ++k) {
    const auto& L = R.levels[k];
    std::string p = "h" + std::to_string(k) + ".";
    add(p + "seed_failures", L.failed, "==", 0);
    add(p + "census_violations", L.census_violations, "==", 0);
    add(p + "rarefaction_class_on_shocks", L.raref_on_shocks, "==", 0);
    add(p + "rarefaction_strength_over_h", L.raref_strength / L.h, "<=", 2);
    add(p + "classification_disagreements", (L.concord.checked - L.concord.agree) +
                                                (L.concord.robust_checked - L.concord.robust_agree), "==", 0);
    if (sc.experiment == "census") continue;
    add(p + "jump_error", L.jump_error, "<=", sc.tolerance("jump"));
    add(p + "ledger_fd_error", L.fd_error, "<=", sc.tolerance("fd"));
    add(p + "ledger_excess", L.excess, "<=", sc.tolerance("excess"));
    add(p + "dissipation_min", L.min_dissipation, ">=", -1e-12);
    add(p + "constraint_violations", L.constraint_violations, "==", 0);
    add(p + "stability_failures", L.stability_failures, "==", 0);
    if (sc.experiment == "weight_audit") add(p + "tracer_mismatches", L.tracer_mismatches, "==", 0);
    bool shifted = sc.data[1].kind == "shift";
    if (shifted) add(p + "shift_ratio_excess", L.ratio_max - 1, "<=", sc.tolerance("shift_ratio"));
    c2.push_back(L.c2_max);
    cemp.push_back(L.c_emp_max);
  }
  if (sc.experiment != "census" && R.levels.size() >= 2) {
    add("c2_spread", relative_spread(c2), "<=", sc.tolerance("c2_variation"));
    add("c_emp_spread", relative_spread(cemp), "<=", sc.tolerance("cemp_variation"));
  }
}

}  // namespace detail

// seeds seed0 .. seed0 + count - 1 at every h level; seeds run concurrently, results kept in seed order
inline RunReport ensemble(const Scenario& sc, int count) {
  RunReport R;
  R.scenario = sc.echo;
  R.experiment = sc.experiment;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  for (int lev = 0; lev < sc.h_levels; ++lev) {
    double h = sc.h / static_cast<double>(1 << lev);
    std::vector<PairResult> rs(static_cast<std::size_t>(count));
    auto job = [&](int s) {
      std::uint64_t seed = sc.seed0 + static_cast<std::uint64_t>(s);
      return std::visit([&](const auto& m) { return run_pair_once(sc, m, seed, h, s == 0); }, sc.model);
    };
    for (int s0 = 0; s0 < count; s0 += static_cast<int>(workers)) {
      std::vector<std::future<PairResult>> fs;
      for (int s = s0; s < std::min(count, s0 + static_cast<int>(workers)); ++s)
        fs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, job, s));
      for (std::size_t i = 0; i < fs.size(); ++i) rs[static_cast<std::size_t>(s0) + i] = fs[i].get();
    }
    for (const auto& r : rs)
      if (!r.ok) R.errors.push_back("h=" + std::to_string(h) + " seed=" + std::to_string(r.seed) + ": " + r.error);
    R.levels.push_back(summarize(rs, h));
    R.results.push_back(std::move(rs));
    if (verbosity() > 0) {
      const auto& L = R.levels.back();
      std::fprintf(stderr, "[%s] h=%g seeds=%d events=%ld ratio_max=%.6g C2=%.6g\n", sc.name.c_str(), h, L.seeds,
                   L.events, L.ratio_max, L.c2_max);
    }
  }
  detail::pair_assertions(sc, R);
  // h-decay of the overshoot and of the rarefaction budget
  nlohmann::json dec = nlohmann::json::array();
  for (std::size_t k = 1; k < R.levels.size(); ++k) {
    const auto &a = R.levels[k - 1], &b = R.levels[k];
    dec.push_back({{"h", b.h},
                   {"overshoot_ratio", a.overshoot > 0 ? nlohmann::json(b.overshoot / a.overshoot) : nlohmann::json()},
                   {"budget_ratio", a.budget > 0 ? nlohmann::json(b.budget / a.budget) : nlohmann::json()}});
  }
  R.extra["decay"] = dec;
  return R;
}

inline RunReport run_pair_experiment(const Scenario& sc) { return ensemble(sc, 1); }

// ---------------------------------------------------------------- identity fuzzing

struct IdentityMax {
  std::map<std::string, double> res;
  int instances = 0;
  void put(const std::string& k, double v) { res[k] = std::max(res.count(k) ? res[k] : 0.0, v); }
};

// randomized residuals of the averaged-matrix and jump identities; count instances per identity
inline IdentityMax identity_fuzz(int count, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  auto uni = [&](double a, double b) { return a + (b - a) * unit_uniform(g); };
  IdentityMax out;
  out.instances = count;
  auto burgers = ScalarFlux::burgers(), cubic = ScalarFlux::cubic();
  PSystem ps(PressureLaw::power(1.4), 0.05, 20);
  EulerAlgebra eu(PressureLaw::power(1.4));
  for (int k = 0; k < count; ++k) {
    // averaged matrix: A(u, u')(u' - u) = f(u') - f(u)
    {
      double u = uni(-3, 3), v = uni(-3, 3);
      double s1 = std::max(1.0, std::abs(burgers.f(v) - burgers.f(u)));
      double s2 = std::max(1.0, std::abs(cubic.f(v) - cubic.f(u)));
      out.put("averaged_matrix", std::abs(burgers.chord(u, v) * (v - u) - (burgers.f(v) - burgers.f(u))) / s1);
      out.put("averaged_matrix", std::abs(cubic.chord(u, v) * (v - u) - (cubic.f(v) - cubic.f(u))) / s2);
      Vec<2> a{uni(-1, 1), uni(0.3, 4)}, b{uni(-1, 1), uni(0.3, 4)};
      out.put("averaged_matrix", matrix_defect(ps, a, b));
      Vec<2> ea{uni(0.2, 3), uni(-2, 2)}, eb{uni(0.2, 3), uni(-2, 2)};
      out.put("averaged_matrix", matrix_defect(eu, ea, eb));
      // Euler averaged velocity: both closed forms
      double r = ea[0], rp = eb[0], uu = ea[1] / ea[0], up = eb[1] / eb[0];
      if (std::abs(r - rp) > 1e-3) {
        double first = (r * uu - rp * up - std::sqrt(r * rp) * (uu - up)) / (r - rp);
        double e = euler_ebar(eu, r, ea[1], rp, eb[1]);
        out.put("euler_averaged_velocity", std::abs(e - first) / std::max(1.0, std::abs(first)));
      }
    }
    // scalar chord identities on random triples
    {
      double um = uni(-2, 2), up = uni(-2, 2), w = uni(-2, 2);
      if (um != up) {
        for (const auto* m : {&burgers, &cubic}) {
          auto rep = classify_scalar_rho(um, up, w, *m);
          out.put("scalar_chord_first", rep.chord_first);
          out.put("scalar_chord_second", rep.chord_second);
        }
      }
    }
    // p-system kappa identities
    {
      double vm = uni(0.3, 4), vp = uni(0.3, 4), w = uni(0.3, 4);
      if (vm != vp) {
        auto rep = classify_psystem_rho(vm, vp, w, 1, ps);
        out.put("psystem_kappa_first", rep.kappa_first);
        out.put("psystem_kappa_second", rep.kappa_second);
      }
    }
    // characteristic jump relations across a p-system shock; psi+ from the linear RH relation
    {
      int fam = k % 2;
      Vec<2> um{uni(-0.5, 0.5), uni(0.5, 2)};
      auto up = hugoniot_psystem(ps, um, fam, um[1] * uni(0.6, 1.6));
      double lb = hugoniot_speed(ps, um[1], up[1], fam);
      Vec<2> w{uni(-0.5, 0.5), uni(0.5, 2)};
      auto am = ps.averaged(um, w), ap = ps.averaged(up, w);
      Vec<2> psim{uni(-1, 1), uni(-1, 1)};
      Mat<2> Bm = am.A, Bp = ap.A;
      for (int i = 0; i < 2; ++i) {
        Bm[i][i] -= lb;
        Bp[i][i] -= lb;
      }
      auto rhs = matvec<2>(Bm, psim);
      double det = Bp[0][0] * Bp[1][1] - Bp[0][1] * Bp[1][0];
      Vec<2> psip{(rhs[0] * Bp[1][1] - Bp[0][1] * rhs[1]) / det, (Bp[0][0] * rhs[1] - Bp[1][0] * rhs[0]) / det};
      auto cd = characteristic_components<2>(am.eig, ap.eig, psim, psip);
      characteristic_flux<2>(cd, am.eig, ap.eig, lb);
      auto rep = verify_jump_relation<2>(am.eig, ap.eig, cd, fam);
      out.put("jump_relation", rep.jump_direct);
      out.put("jump_relation_symmetric", rep.jump_symmetric);
      // transversal decomposition of the flux remainder
      auto si = verify_system_identity(ps, um, up, w, fam);
      out.put("system_identity", std::max({si.form1, si.form2, si.transversal}));
      out.put("system_identity_projection", std::max(si.projection_m, si.projection_p));
    }
  }
  return out;
}

// ---------------------------------------------------------------- driver

inline RunReport run_scenario(const Scenario& sc, int seeds) {
  if (sc.experiment == "identity_fuzz") {
    RunReport R;
    R.scenario = sc.echo;
    R.experiment = sc.experiment;
    auto f = identity_fuzz(sc.fuzz, sc.seed0);
    R.extra["instances"] = f.instances;
    R.extra["residuals"] = f.res;
    for (const auto& [k, v] : f.res) R.assertions.push_back(make_assertion("identity." + k, v, "<=", sc.tolerance("identity")));
    return R;
  }
  if (sc.experiment == "monotonicity") {
    RunReport R;
    R.scenario = sc.echo;
    R.experiment = sc.experiment;
    const auto& M = sc.mono;
    auto rep = std::visit(
        [&](const auto& m) {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ScalarFlux>)
            return monotonicity_scan(m, M.u_minus, M.probe, M.lo, M.hi, M.samples);
          else
            return monotonicity_scan(m, M.u_minus, M.family, M.probe, M.lo, M.hi, M.samples);
        },
        sc.model);
    R.extra["monotone"] = rep.monotone;
    R.extra["slack"] = rep.slack;
    R.extra["gnl"] = rep.gnl;
    R.extra["entropy_checked"] = rep.entropy_checked;
    R.assertions.push_back(make_assertion("monotone_matches_expectation", rep.monotone == M.expect_monotone, "==", 1));
    if (M.expect_monotone) R.assertions.push_back(make_assertion("slack", rep.slack, ">", 0));
    R.assertions.push_back(make_assertion("entropy_violations", rep.entropy_violations, "==", 0));
    return R;
  }
  return ensemble(sc, seeds);
}

inline nlohmann::json report_json(const RunReport& R) {
  nlohmann::json j;
  j["scenario"] = R.scenario;
  j["experiment"] = R.experiment;
  j["pass"] = R.pass();
  nlohmann::json lv = nlohmann::json::array();
  for (const auto& L : R.levels) {
    lv.push_back({{"h", L.h},
                  {"seeds", L.seeds},
                  {"failed", L.failed},
                  {"events", L.events},
                  {"records", L.records},
                  {"l1_ratio_max", L.ratio_max},
                  {"c_empirical_max", L.c_emp_max},
                  {"C2_max", L.c2_max},
                  {"osc_const_max", L.osc_const_max},
                  {"osc_const_median", L.osc_const_median},
                  {"overshoot_rel_sum", L.overshoot},
                  {"budget_rel_sum", L.budget},
                  {"ledger_fd_error", L.fd_error},
                  {"ledger_excess", L.excess},
                  {"ledger_vertex_jump", L.vertex_jump},
                  {"jump_error", L.jump_error},
                  {"jump_violations", L.jump_violations},
                  {"constraint_violations", L.constraint_violations},
                  {"stability_failures", L.stability_failures},
                  {"census",
                   {{"violations", L.census_violations},
                    {"rarefaction_class", L.raref_class},
                    {"rarefaction_class_on_shocks", L.raref_on_shocks},
                    {"max_rarefaction_strength", L.raref_strength}}},
                  {"classification",
                   {{"checked", L.concord.checked},
                    {"agree", L.concord.agree},
                    {"robust_checked", L.concord.robust_checked},
                    {"robust_agree", L.concord.robust_agree}}}});
  }
  j["levels"] = lv;
  j["extra"] = R.extra;
  nlohmann::json as = nlohmann::json::array();
  for (const auto& a : R.assertions)
    as.push_back({{"name", a.name}, {"measured", a.measured}, {"relation", a.relation}, {"tolerance", a.tolerance}, {"pass", a.pass}});
  j["assertions"] = as;
  j["errors"] = R.errors;
  return j;
}

inline std::string seeds_csv(const RunReport& R) {
  std::ostringstream os;
  os.precision(17);
  os << "level,h,seed,ok,events,records,l1_0,l1_max,ratio,C2,osc,osc_const,jump_error,fd_error,excess,overshoot,budget,"
        "c_empirical,c_bound\n";
  for (std::size_t k = 0; k < R.results.size(); ++k)
    for (const auto& r : R.results[k])
      os << k << ',' << r.h << ',' << r.seed << ',' << r.ok << ',' << r.events << ',' << r.records << ',' << r.l1_0 << ','
         << r.l1_max << ',' << r.ratio << ',' << r.C2 << ',' << r.osc << ',' << r.osc_const << ',' << r.jump_error << ','
         << r.fd_error << ',' << r.excess << ',' << r.overshoot << ',' << r.budget << ',' << r.c_empirical << ','
         << r.c_bound << '\n';
  return os.str();
}

inline std::string l1_csv(const RunReport& R) {
  std::ostringstream os;
  os.precision(17);
  os << "level,h,seed,t,l1\n";
  for (std::size_t k = 0; k < R.results.size(); ++k)
    for (const auto& r : R.results[k])
      for (const auto& [t, v] : r.l1) os << k << ',' << r.h << ',' << r.seed << ',' << t << ',' << v << '\n';
  return os.str();
}

// report.json, seeds.csv, l1_series.csv and the first seed's ledger/weight/records per level
inline void write_report(const RunReport& R, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& body) {
    std::ofstream o(fs::path(dir) / name, std::ios::binary);
    if (!o) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
    o << body;
  };
  put("report.json", report_json(R).dump(2) + "\n");
  if (R.results.empty()) return;
  put("seeds.csv", seeds_csv(R));
  put("l1_series.csv", l1_csv(R));
  for (std::size_t k = 0; k < R.results.size(); ++k) {
    const auto& r = R.results[k].front();
    std::string s = std::to_string(k);
    if (!r.ledger_csv.empty()) put("ledger_h" + s + ".csv", r.ledger_csv);
    if (!r.weight_csv.empty()) put("weight_h" + s + ".csv", r.weight_csv);
    if (!r.records_csv.empty()) put("records_h" + s + ".csv", r.records_csv);
  }
}

}  // namespace l1stab
