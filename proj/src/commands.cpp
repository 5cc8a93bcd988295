#include "nmode/commands.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace nmode::cli {

namespace {

std::string iso_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd json_to_vector(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

struct SeedState {
  Eigen::VectorXd q;
  double omega = 0.0;
  bool already_converged = false;
};

double family_birth_eta(int d, int sigma) {
  // first determinant zero of the uniform state: eta = -2^{d sigma} / sigma
  return -std::pow(2.0, double(d) * sigma) / sigma;
}

/// Seed (q, Omega) for a named solution family at the given eta.
SeedState resolve_seed(const LatticeSpec& spec, int sigma, double eta, const std::string& selector) {
  const int d = spec.dims();
  SeedState seed;
  const auto scalar_family_state = [&](double chi, const std::function<Eigen::VectorXd(double)>& q_of_z)
      -> SeedState {
    double z;
    if (sigma == 1) {
      if (chi > -1.0) throw CommandError("no_branch", "seed family does not exist at eta=" + fmt(eta));
      z = std::sqrt(chi * chi - 1.0) / std::abs(chi);
    } else {
      const auto roots = scalar_pitchfork_positive_roots(chi, sigma);
      if (roots.empty()) throw CommandError("no_branch", "seed family does not exist at eta=" + fmt(eta));
      z = roots.front();
    }
    SeedState s;
    s.q = q_of_z(z);
    // Omega from the first stationary equation
    const Eigen::VectorXd f = residual_positive(s.q, StationaryParams{sigma, eta}, 0.0, spec);
    s.omega = f[0];
    return s;
  };

  if (selector == "symmetric") {
    auto [q0, omega0] = symmetric_solution(spec, sigma, eta);
    seed.q = q0;
    seed.omega = omega0;
    return seed;
  }
  if (selector == "asym") {
    if (d != 1) throw CommandError("invalid_parameter", "seed 'asym' requires --d 1");
    return scalar_family_state(eta / std::pow(2.0, sigma), [](double z) {
      return Eigen::Vector2d((1.0 + z) / 2.0, (1.0 - z) / 2.0);
    });
  }
  if (selector == "mirror") {
    if (d != 2) throw CommandError("invalid_parameter", "seed 'mirror' requires --d 2");
    return scalar_family_state(eta / std::pow(4.0, sigma), [](double z) {
      return Eigen::Vector4d((1.0 + z) / 4.0, (1.0 + z) / 4.0, (1.0 - z) / 4.0, (1.0 - z) / 4.0);
    });
  }
  if (selector == "point") {
    if (d != 2) throw CommandError("invalid_parameter", "seed 'point' requires --d 2");
    return scalar_family_state(eta / (2.0 * std::pow(4.0, sigma)), [](double z) {
      return Eigen::Vector4d((1.0 + z) / 4.0, (1.0 - z) / 4.0, (1.0 - z) / 4.0, (1.0 + z) / 4.0);
    });
  }
  if (selector.rfind("file:", 0) == 0) {
    std::ifstream in(selector.substr(5));
    if (!in) throw CommandError("io_error", "cannot open seed file '" + selector.substr(5) + "'");
    json j = json::parse(in);
    seed.q = json_to_vector(j.at("q"));
    seed.omega = j.at("Omega").get<double>();
    if (seed.q.size() != spec.size())
      throw CommandError("invalid_parameter", "seed file size does not match the lattice");
    return seed;
  }

  // family selectors with an optional -branch-<side> suffix
  std::string family = selector, side;
  if (const auto pos = selector.find("-branch-"); pos != std::string::npos) {
    family = selector.substr(0, pos);
    side = selector.substr(pos + 8);
  }
  std::string cls;
  if (family == "F23Ter") {
    if (d != 2) throw CommandError("invalid_parameter", "seed 'F23Ter' requires --d 2");
    cls = "partial2d";
    if (side.empty()) side = "b";
  } else if (family == "F27") {
    if (d != 3) throw CommandError("invalid_parameter", "seed 'F27' requires --d 3");
    cls = "partial3d_f27";
    if (side.empty()) side = "b";
  } else if (family == "F28") {
    if (d != 3) throw CommandError("invalid_parameter", "seed 'F28' requires --d 3");
    cls = "partial3d_f28";
    if (side.empty()) side = "d";
  } else {
    throw CommandError("invalid_parameter", "unknown seed selector '" + selector + "'");
  }
  try {
    const NewtonResult res = family_state(spec, sigma, cls, side, eta);
    seed.q = res.q;
    seed.omega = res.omega;
    seed.already_converged = true;
    return seed;
  } catch (const std::exception& e) {
    throw CommandError("no_branch", e.what());
  }
}

}  // namespace

json make_envelope(const std::string& command, json parameters, json payload) {
  json env;
  env["schema_version"] = kSchemaVersion;
  env["command"] = command;
  env["parameters"] = std::move(parameters);
  env["payload"] = std::move(payload);
  env["provenance"] = {{"timestamp", iso_timestamp()}, {"version", kArtifactVersion}};
  return env;
}

json make_error_envelope(const std::string& command, const std::string& kind, const std::string& message) {
  json env;
  env["schema_version"] = kSchemaVersion;
  env["command"] = command;
  env["error"] = {{"kind", kind}, {"message", message}};
  env["provenance"] = {{"timestamp", iso_timestamp()}, {"version", kArtifactVersion}};
  return env;
}

WellProfile parse_profile(const std::string& text) {
  if (text.rfind("parabola:", 0) == 0) {
    const auto rest = text.substr(9);
    const auto sep = rest.find(':');
    if (sep == std::string::npos)
      throw CommandError("invalid_parameter", "profile format is parabola:<vmin>:<a>");
    const double vmin = std::stod(rest.substr(0, sep));
    const double a = std::stod(rest.substr(sep + 1));
    if (!(vmin < 0.0) || !(a > 0.0))
      throw CommandError("invalid_parameter", "parabola profile requires vmin < 0 and a > 0");
    return WellProfile::analytic([vmin, a](double r) { return r < a ? vmin * (1.0 - r * r / (a * a)) : 0.0; },
                                 a);
  }
  if (text.rfind("table:", 0) == 0) {
    std::ifstream in(text.substr(6));
    if (!in) throw CommandError("io_error", "cannot open profile table '" + text.substr(6) + "'");
    std::vector<double> r, f;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
      std::istringstream row(line);
      std::string a, b;
      if (!std::getline(row, a, ',') || !std::getline(row, b, ',')) continue;
      r.push_back(std::stod(a));
      f.push_back(std::stod(b));
    }
    try {
      return WellProfile::from_table(std::move(r), std::move(f));
    } catch (const std::exception& e) {
      throw CommandError("invalid_profile", e.what());
    }
  }
  throw CommandError("invalid_parameter", "profile must be parabola:<vmin>:<a> or table:<path>");
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CommandError("io_error", "cannot write '" + path + "'");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

json cmd_spectrum(int d, const Units& units, const std::string& method) {
  if (d < 1) throw CommandError("invalid_parameter", "d must be >= 1");
  if (method != "recursive" && method != "dense")
    throw CommandError("invalid_parameter", "method must be recursive or dense");
  const LatticeSpec spec = LatticeSpec::hypercube(d);
  json payload;
  SpectrumMultiset lines;
  if (method == "recursive") {
    lines = spectrum_recursive(d, units.lambda_d, units.beta);
  } else {
    const HoppingMatrix t = build_hopping_matrix(spec, units.lambda_d, units.beta);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.entries);
    if (es.info() != Eigen::Success) throw CommandError("solver_failure", "dense eigensolve failed");
    lines = cluster_spectrum(es.eigenvalues(), 1e-8 * units.beta);
    json vecs = json::array();
    for (Eigen::Index k = 0; k < es.eigenvectors().cols(); ++k)
      vecs.push_back(vector_to_json(es.eigenvectors().col(k)));
    payload["eigenvalues_raw"] = vector_to_json(es.eigenvalues());
    payload["eigenvectors"] = vecs;
  }
  json jlines = json::array();
  for (const auto& line : lines)
    jlines.push_back({{"value", line.value}, {"multiplicity", line.multiplicity}});
  payload["spectrum"] = jlines;
  payload["size"] = spec.size();
  return make_envelope("spectrum",
                       {{"d", d},
                        {"lambda_d", units.lambda_d},
                        {"beta", units.beta},
                        {"method", method}},
                       payload);
}

json cmd_solve(int d, int sigma, double eta, const std::string& seed_selector, double tol) {
  if (d < 1) throw CommandError("invalid_parameter", "d must be >= 1");
  if (sigma < 1) throw CommandError("invalid_parameter", "sigma must be >= 1");
  if (!(tol > 0.0)) throw CommandError("invalid_parameter", "tol must be positive");
  const LatticeSpec spec = LatticeSpec::hypercube(d);
  const SeedState seed = resolve_seed(spec, sigma, eta, seed_selector);
  NewtonConfig cfg;
  cfg.tol = tol;
  const NewtonResult res = solve_newton(seed.q, seed.omega, StationaryParams{sigma, eta}, spec, cfg);
  if (!res.converged)
    throw CommandError("no_convergence",
                       "Newton did not converge (" + res.failure + "), final residual " + fmt(res.residual_norm));
  const Eigen::MatrixXd jac = jacobian_positive(res.q, StationaryParams{sigma, eta}, spec);
  json payload;
  payload["q"] = vector_to_json(res.q);
  payload["Omega"] = res.omega;
  payload["residual_norm"] = res.residual_norm;
  payload["iterations"] = res.iterations;
  payload["jacobian_determinant"] = jac.determinant();
  payload["symmetry"] = detect_symmetry_class(spec, res.q, 1e-8).label;
  return make_envelope("solve",
                       {{"d", d}, {"sigma", sigma}, {"eta", eta}, {"seed", seed_selector}, {"tol", tol}},
                       payload);
}

json cmd_continue(int d, int sigma, double eta_min, double eta_max, const StepControl& step,
                  const std::string& branches_csv, const std::string& events_csv, int threads) {
  if (d < 1) throw CommandError("invalid_parameter", "d must be >= 1");
  if (sigma < 1) throw CommandError("invalid_parameter", "sigma must be >= 1");
  if (!(eta_min < eta_max)) throw CommandError("invalid_parameter", "eta range must satisfy min < max");
  const LatticeSpec spec = LatticeSpec::hypercube(d);
  ContinuationConfig cfg;
  cfg.step = step;
  const Diagram diagram = sweep_ground_diagram(spec, sigma, eta_min, eta_max, cfg, 64, threads);

  const Eigen::Index n = spec.size();
  std::vector<std::string> header = {"branch_id", "symmetry", "eta", "Omega"};
  for (Eigen::Index j = 0; j < n; ++j) header.push_back("q_" + std::to_string(j + 1));
  header.push_back("det_sign");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t b = 0; b < diagram.branches.size(); ++b)
    for (const auto& p : diagram.branches[b].points) {
      std::vector<std::string> row = {std::to_string(b), diagram.branches[b].symmetry.label, fmt(p.eta),
                                      fmt(p.omega)};
      for (Eigen::Index j = 0; j < n; ++j) row.push_back(fmt(p.q[j]));
      row.push_back(std::to_string(p.det_sign));
      rows.push_back(std::move(row));
    }
  if (!branches_csv.empty()) write_csv(branches_csv, header, rows);

  std::vector<std::string> ev_header = {"kind", "eta_star", "Omega_star"};
  for (Eigen::Index j = 0; j < n; ++j) ev_header.push_back("q_" + std::to_string(j + 1));
  ev_header.push_back("branch_count");
  std::vector<std::vector<std::string>> ev_rows;
  json jevents = json::array();
  for (const auto& ev : diagram.events) {
    const std::string kind = ev.kind == BifurcationEvent::Kind::fold ? "fold" : "branch_point";
    std::vector<std::string> row = {kind, fmt(ev.eta_star), fmt(ev.omega_star)};
    for (Eigen::Index j = 0; j < n; ++j) row.push_back(fmt(ev.q_star[j]));
    row.push_back(std::to_string(ev.branch_count));
    ev_rows.push_back(std::move(row));
    jevents.push_back({{"kind", kind},
                       {"eta_star", ev.eta_star},
                       {"Omega_star", ev.omega_star},
                       {"q_star", vector_to_json(ev.q_star)},
                       {"branch_count", ev.branch_count}});
  }
  if (!events_csv.empty()) write_csv(events_csv, ev_header, ev_rows);

  json jbranches = json::array();
  for (std::size_t b = 0; b < diagram.branches.size(); ++b) {
    const auto& br = diagram.branches[b];
    double lo = br.points.front().eta, hi = br.points.front().eta;
    for (const auto& p : br.points) {
      lo = std::min(lo, p.eta);
      hi = std::max(hi, p.eta);
    }
    jbranches.push_back({{"id", b},
                         {"symmetry", br.symmetry.label},
                         {"origin", br.origin},
                         {"termination", br.termination},
                         {"points", br.points.size()},
                         {"eta_min", lo},
                         {"eta_max", hi}});
  }
  json payload;
  payload["branches"] = jbranches;
  payload["events"] = jevents;
  if (!branches_csv.empty()) payload["branches_csv"] = branches_csv;
  if (!events_csv.empty()) payload["events_csv"] = events_csv;
  return make_envelope("continue",
                       {{"d", d},
                        {"sigma", sigma},
                        {"eta_min", eta_min},
                        {"eta_max", eta_max},
                        {"step_initial", step.initial},
                        {"step_min", step.min},
                        {"step_max", step.max},
                        {"threads", threads}},
                       payload);
}

json cmd_dynamics(int d, const Units& units, double epsilon_c, int sigma, double t0, double t1,
                  const std::string& initial, int samples, double rel_tol, double abs_tol,
                  const std::string& csv_path) {
  if (d < 1) throw CommandError("invalid_parameter", "d must be >= 1");
  if (sigma < 1) throw CommandError("invalid_parameter", "sigma must be >= 1");
  if (t1 == t0) throw CommandError("invalid_parameter", "time span is empty");
  if (samples < 2) throw CommandError("invalid_parameter", "samples must be >= 2");
  const LatticeSpec spec = LatticeSpec::hypercube(d);
  const HoppingMatrix t = build_hopping_matrix(spec, units.lambda_d, units.beta);

  Eigen::VectorXcd d0;
  if (initial == "ground") {
    d0 = ground_state_vector(d).cast<std::complex<double>>();
  } else if (initial.rfind("site:", 0) == 0) {
    const int site = std::stoi(initial.substr(5));
    if (site < 0 || site >= spec.size())
      throw CommandError("invalid_parameter", "site index out of range");
    d0 = Eigen::VectorXcd::Zero(spec.size());
    d0[site] = 1.0;
  } else if (initial.rfind("stationary:", 0) == 0) {
    const double eta = epsilon_c / units.beta;
    const SeedState seed = resolve_seed(spec, sigma, eta, initial.substr(11));
    const NewtonResult res = solve_newton(seed.q, seed.omega, StationaryParams{sigma, eta}, spec);
    if (!res.converged) throw CommandError("no_convergence", "stationary seed failed: " + res.failure);
    d0 = res.q.cwiseSqrt().cast<std::complex<double>>();
  } else if (initial.rfind("file:", 0) == 0) {
    std::ifstream in(initial.substr(5));
    if (!in) throw CommandError("io_error", "cannot open initial state '" + initial.substr(5) + "'");
    json j = json::parse(in);
    d0.resize(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index k = 0; k < d0.size(); ++k)
      d0[k] = std::complex<double>(j.at(static_cast<std::size_t>(k)).at(0).get<double>(),
                                   j.at(static_cast<std::size_t>(k)).at(1).get<double>());
    if (d0.size() != spec.size())
      throw CommandError("invalid_parameter", "initial state size does not match the lattice");
  } else {
    throw CommandError("invalid_parameter", "initial must be ground, site:<k>, stationary:<seed> or file:<path>");
  }
  if (std::abs(d0.squaredNorm() - 1.0) > 1e-12)
    throw CommandError("invalid_parameter", "initial state must be normalised to 1e-12");

  DynamicsConfig cfg;
  cfg.hbar = units.hbar;
  cfg.epsilon_c = epsilon_c;
  cfg.sigma = sigma;
  cfg.t0 = t0;
  cfg.t1 = t1;
  cfg.rel_tol = rel_tol;
  cfg.abs_tol = abs_tol;
  cfg.sample_times.resize(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k)
    cfg.sample_times[static_cast<std::size_t>(k)] = t0 + (t1 - t0) * k / (samples - 1);

  Trajectory traj;
  try {
    traj = evolve(d0, t, cfg);
  } catch (const std::exception& e) {
    throw CommandError("integrator_failure", e.what());
  }
  const ConservationReport rep = verify_conservation(traj);

  if (!csv_path.empty()) {
    const Eigen::Index n = spec.size();
    std::vector<std::string> header = {"t", "norm", "hamiltonian"};
    for (Eigen::Index j = 0; j < n; ++j) header.push_back("q_" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < n; ++j) header.push_back("theta_" + std::to_string(j + 1));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
      std::vector<std::string> row = {fmt(traj.times[i]), fmt(traj.norms[i]), fmt(traj.hamiltonians[i])};
      const ModeState ms = to_mode_state(traj.states[i]);
      for (Eigen::Index j = 0; j < n; ++j) row.push_back(fmt(ms.q[j]));
      for (Eigen::Index j = 0; j < n; ++j) row.push_back(fmt(ms.theta[j]));
      rows.push_back(std::move(row));
    }
    write_csv(csv_path, header, rows);
  }

  json payload;
  payload["samples"] = traj.times.size();
  payload["conservation"] = {{"max_norm_drift", rep.max_norm_drift},
                             {"max_hamiltonian_drift", rep.max_hamiltonian_drift}};
  payload["final_state_q"] = vector_to_json(to_mode_state(traj.states.back()).q);
  if (!csv_path.empty()) payload["csv"] = csv_path;
  return make_envelope("dynamics",
                       {{"d", d},
                        {"lambda_d", units.lambda_d},
                        {"beta", units.beta},
                        {"hbar", units.hbar},
                        {"epsilon_c", epsilon_c},
                        {"sigma", sigma},
                        {"t0", t0},
                        {"t1", t1},
                        {"initial", initial},
                        {"samples", samples},
                        {"rel_tol", rel_tol},
                        {"abs_tol", abs_tol}},
                       payload);
}

json cmd_reconstruct(int d, int sigma, double eta, const std::string& state_selector,
                     const std::string& profile_text, double spacing, double hbar, int grid_samples,
                     double grid_margin, const std::string& format, const std::string& out_path) {
  if (d < 1) throw CommandError("invalid_parameter", "d must be >= 1");
  if (grid_samples < 2) throw CommandError("invalid_parameter", "grid samples must be >= 2");
  if (!(grid_margin >= 0.0)) throw CommandError("invalid_parameter", "grid margin must be >= 0");
  if (format != "csv" && format != "bin") throw CommandError("invalid_parameter", "format must be csv or bin");
  const WellProfile profile = parse_profile(profile_text);
  if (!(spacing > 2.0 * profile.support_radius()))
    throw CommandError("invalid_parameter", "spacing must exceed twice the profile support radius");
  const LatticeSpec spec = LatticeSpec::hypercube(d);
  const LatticeGeometry geom{spacing, spec};

  const SeedState seed = resolve_seed(spec, sigma, eta, state_selector);
  const NewtonResult res = solve_newton(seed.q, seed.omega, StationaryParams{sigma, eta}, spec);
  if (!res.converged) throw CommandError("no_convergence", "state solve failed: " + res.failure);
  const ModeState state = make_mode_state(res.q, Eigen::VectorXd::Zero(spec.size()));

  const GridSpec grid = cover_lattice(geom, grid_margin, grid_samples);
  const ScalarField field = reconstruct_wavefunction(state, geom, profile, hbar, grid);

  if (format == "csv") {
    std::vector<std::string> header;
    for (int m = 0; m < d; ++m) header.push_back("x_" + std::to_string(m + 1));
    header.push_back("abs_psi");
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<std::size_t>(field.grid.total()));
    for (Eigen::Index i = 0; i < field.grid.total(); ++i) {
      const Eigen::VectorXd x = field.grid.point(i);
      std::vector<std::string> row;
      for (int m = 0; m < d; ++m) row.push_back(fmt(x[m]));
      row.push_back(fmt(field.values[i]));
      rows.push_back(std::move(row));
    }
    write_csv(out_path, header, rows);
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw CommandError("io_error", "cannot write '" + out_path + "'");
    json head;
    head["shape"] = field.grid.shape;
    head["origin"] = vector_to_json(field.grid.origin);
    head["spacing"] = vector_to_json(field.grid.step);
    head["dtype"] = "float64";
    head["byte_order"] = "little";
    head["field"] = "abs_psi";
    out << head.dump() << "\n";
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(field.values.data()),
              static_cast<std::streamsize>(field.values.size() * sizeof(double)));
  }

  json fractions = json::array();
  for (std::size_t s = 0; s < static_cast<std::size_t>(spec.size()); ++s)
    fractions.push_back(mass_fraction_within(field, well_center(geom, s), 0.5 * spacing));
  json payload;
  payload["squared_mass"] = squared_mass(field);
  payload["well_mass_fractions"] = fractions;
  payload["q"] = vector_to_json(res.q);
  payload["Omega"] = res.omega;
  payload["path"] = out_path;
  return make_envelope("reconstruct",
                       {{"d", d},
                        {"sigma", sigma},
                        {"eta", eta},
                        {"state", state_selector},
                        {"profile", profile_text},
                        {"spacing", spacing},
                        {"hbar", hbar},
                        {"grid_samples", grid_samples},
                        {"grid_margin", grid_margin},
                        {"format", format}},
                       payload);
}

json cmd_agmon(const std::string& profile_text, double spacing) {
  WellProfile profile = parse_profile(profile_text);
  if (!(spacing > 2.0 * profile.support_radius()))
    throw CommandError("invalid_parameter", "spacing must exceed twice the profile support radius");
  double err = 0.0;
  double s0 = 0.0;
  try {
    s0 = agmon_s0(profile, spacing, &err);
  } catch (const std::exception& e) {
    throw CommandError("invalid_profile", e.what());
  }
  json payload;
  payload["S0"] = s0;
  payload["quadrature_error_estimate"] = err;
  payload["support_radius"] = profile.support_radius();
  payload["depth"] = profile.depth();
  return make_envelope("agmon", {{"profile", profile_text}, {"b", spacing}}, payload);
}

}  // namespace nmode::cli
