#include "mqs/cli.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>

#include <CLI11.hpp>

#include "mqs/error.hpp"
#include "mqs/ph.hpp"

namespace mqs {

using nlohmann::json;
namespace fs = std::filesystem;

void write_plot_data(const Assembly& as, const Trajectory& tr, const ConstantsReport& c,
                     const fs::path& dir) {
  std::ofstream ev(dir / "energy_vs_time.csv", std::ios::binary);
  std::ofstream bv(dir / "bounds_vs_time.csv", std::ios::binary);
  if (!ev || !bv) throw Error("cannot write plot data into " + dir.string());
  ev << "t,energy,reference\r\n";
  bv << "t,energy,bound\r\n";
  const double E0 = tr.energy(0);
  double vsum = 0.0;
  for (int k = 0; k <= tr.steps(); ++k) {
    const double t = tr.t[std::size_t(k)];
    if (k > 0) {
      const Vec v = tr.v.col(k);
      vsum += tr.dt * v.dot(as.R_inv * v);
    }
    ev << format_double(t) << ',' << format_double(tr.energy(k)) << ','
       << format_double(std::exp(-2.0 * c.omega * t) * E0) << "\r\n";
    bv << format_double(t) << ',' << format_double(tr.energy(k)) << ','
       << format_double(E0 + 0.25 * vsum) << "\r\n";
  }
  if (!ev || !bv) throw Error("write failed in " + dir.string());
}

namespace {

struct Options {
  std::string scenario;
  std::string out = ".";
  double eps = 1.0;
  double tol_abs = 1e-10;
  double tol_rel = 1e-8;
  std::uint64_t seed = 1;
  int jobs = 1;
};

constexpr int structural_samples = 1000;
constexpr double sweep_eps[] = {0.1, 0.5, 1.0, 1.5, 1.9};

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

fs::path prepare_out(const Options& o) {
  fs::path dir(o.out);
  fs::create_directories(dir);
  return dir;
}

void warn_projection(const Trajectory& tr) {
  if (tr.initial_projection_defect > 1e-12)
    std::cerr << "warning: A0 is not in the gauge space; projected (relative change "
              << format_double(tr.initial_projection_defect) << ")\n";
}

AuditReport run_tasks(std::vector<std::function<AuditReport()>> tasks, int jobs,
                      Tolerances tol) {
  std::vector<AuditReport> results(tasks.size(), AuditReport(tol));
  if (jobs <= 1) {
    for (std::size_t k = 0; k < tasks.size(); ++k) results[k] = tasks[k]();
  } else {
    for (std::size_t start = 0; start < tasks.size(); start += std::size_t(jobs)) {
      std::vector<std::future<AuditReport>> futures;
      const auto stop = std::min(tasks.size(), start + std::size_t(jobs));
      for (std::size_t k = start; k < stop; ++k)
        futures.push_back(std::async(std::launch::async, tasks[k]));
      for (std::size_t k = start; k < stop; ++k) results[k] = futures[k - start].get();
    }
  }
  AuditReport merged(tol);
  for (const auto& r : results) merged.merge(r);
  return merged;
}

struct PhSummary {
  AuditReport rows;
  json section;
};

PhSummary ph_checks(const Assembly& as, const Trajectory* tr, std::uint64_t seed,
                    Tolerances tol) {
  PhSummary out{AuditReport(tol), json::object()};
  const DiracOperator D(as.X);
  const double skew = skew_defect(D);
  const auto samples = check_dirac_samples(D, structural_samples, seed);
  const ResistiveRelation rel(as.complex.sigma_mass, as.scenario.circuit.R);
  const auto res = check_resistive_samples(rel, as.complex.edges, as.scenario.circuit.m,
                                           structural_samples, seed + 1);
  double resistive_slack = -res.max_value;
  out.rows.add_abs("ph.dirac_skew", skew, 0.0, 1e-12);
  out.rows.add_abs("ph.dirac_pairing", samples.max_member_pairing, 0.0, 1e-12);
  out.rows.add_abs("ph.dirac_nonmember", 1e-8, samples.min_nonmember_pairing, 0.0);
  out.rows.add_abs("ph.resistive", res.max_value, 0.0, 0.0);
  out.section["dirac_skew_max_defect"] = skew;
  out.section["dirac_member_max_pairing"] = samples.max_member_pairing;
  out.section["dirac_nonmember_min_pairing"] = samples.min_nonmember_pairing;
  out.section["resistive_violations"] = res.violations;
  out.section["samples"] = structural_samples;
  if (tr) {
    const auto& R = as.scenario.circuit.R;
    for (int k = 1; k <= tr->steps(); ++k) {
      const Vec i = tr->i.col(k);
      resistive_slack = std::min(resistive_slack, tr->sigma_rate(k) + i.dot(R * i));
    }
    const auto phr = ph_residual(as, *tr);
    const double escale = energy_scale(as, *tr);
    out.rows.add_abs("ph.inclusion", phr.max_inclusion, 0.0, 10.0 * tr->newton_tol);
    out.rows.add_abs("ph.ham_energy", 0.0, phr.min_ham_slack,
                     std::max(tol.abs, 10.0 * tr->newton_tol) * escale);
    out.section["ph_inclusion_max_residual"] = phr.max_inclusion;
    out.section["ham_energy_min_slack"] = phr.min_ham_slack;
  }
  out.section["resistive_min_slack"] = resistive_slack;
  return out;
}

json settings_json(const Options& o) {
  return {{"eps", o.eps}, {"tol_abs", o.tol_abs}, {"tol_rel", o.tol_rel}, {"seed", o.seed}};
}

int finish(const AuditReport& rep, const json& doc, const fs::path& path) {
  write_json(doc, path);
  const int fails = rep.failures();
  std::cout << rep.rows().size() << " audit rows, " << fails << " failed; report "
            << path.string() << "\n";
  return fails == 0 ? 0 : 2;
}

json document(const Options& o, const ConstantsReport& c, const AuditReport& rep) {
  json doc;
  doc["settings"] = settings_json(o);
  doc["constants"] = to_json(c);
  doc["audits"] = to_json(rep);
  doc["audit_meta"] = rep.meta;
  doc["summary"] = {{"rows", rep.rows().size()}, {"failures", rep.failures()}};
  return doc;
}

int cmd_simulate(const Options& o) {
  const auto dir = prepare_out(o);
  const Assembly as = assemble(load_scenario(o.scenario));
  const auto pr = build_projector(as.inner);
  const auto c = compute_constants(as, pr);
  const Trajectory tr = simulate(as);
  warn_projection(tr);
  write_trajectory_csv(tr, dir / "trajectory.csv");
  write_state_dump(tr, dir / "state.bin");
  write_plot_data(as, tr, c, dir);
  std::cout << "simulated " << tr.steps() << " steps; wrote " << (dir / "trajectory.csv").string()
            << "\n";
  return 0;
}

int cmd_constants(const Options& o) {
  const auto dir = prepare_out(o);
  const Tolerances tol{o.tol_abs, o.tol_rel};
  const Assembly as = assemble(load_scenario(o.scenario));
  const auto pr = build_projector(as.inner);
  const auto c = compute_constants(as, pr);
  const auto rep = audit_constants(as, pr, c, tol);
  return finish(rep, document(o, c, rep), dir / "constants.json");
}

int cmd_audit(const Options& o) {
  const auto dir = prepare_out(o);
  const Tolerances tol{o.tol_abs, o.tol_rel};
  const Assembly as = assemble(load_scenario(o.scenario));
  const auto pr = build_projector(as.inner);
  const auto c = compute_constants(as, pr);
  const Trajectory tr = simulate(as);
  warn_projection(tr);
  write_trajectory_csv(tr, dir / "trajectory.csv");
  write_state_dump(tr, dir / "state.bin");
  write_plot_data(as, tr, c, dir);

  std::vector<double> eps_list{o.eps};
  for (double e : sweep_eps)
    if (e != o.eps) eps_list.push_back(e);
  std::vector<std::function<AuditReport()>> tasks;
  tasks.emplace_back([&] { return audit_constants(as, pr, c, tol); });
  tasks.emplace_back([&] { return audit_energy_balance(as, tr, c, tol); });
  for (double e : eps_list)
    tasks.emplace_back([&, e] { return audit_output_bounds(as, tr, c, e, tol); });
  tasks.emplace_back([&] { return audit_state_bounds(as, tr, c, pr, tol); });
  const bool free_input = as.scenario.input.values.cwiseAbs().maxCoeff() == 0.0;
  if (free_input) tasks.emplace_back([&] { return audit_decay(as, tr, c, pr, tol); });
  AuditReport rep = run_tasks(std::move(tasks), o.jobs, tol);
  auto ph = ph_checks(as, &tr, o.seed, tol);
  rep.merge(ph.rows);

  json doc = document(o, c, rep);
  doc["trajectory_meta"] = trajectory_meta(as, tr);
  doc["ph"] = ph.section;
  return finish(rep, doc, dir / "report.json");
}

int cmd_decay(const Options& o) {
  const auto dir = prepare_out(o);
  const Tolerances tol{o.tol_abs, o.tol_rel};
  const Assembly as = assemble(with_zero_input(load_scenario(o.scenario)));
  const auto pr = build_projector(as.inner);
  const auto c = compute_constants(as, pr);
  const Trajectory tr = simulate(as);
  warn_projection(tr);
  write_trajectory_csv(tr, dir / "trajectory.csv");
  write_plot_data(as, tr, c, dir);
  std::vector<std::function<AuditReport()>> tasks;
  tasks.emplace_back([&] { return audit_decay(as, tr, c, pr, tol); });
  tasks.emplace_back([&] { return audit_energy_balance(as, tr, c, tol); });
  tasks.emplace_back([&] { return audit_state_bounds(as, tr, c, pr, tol); });
  const AuditReport rep = run_tasks(std::move(tasks), o.jobs, tol);
  json doc = document(o, c, rep);
  doc["trajectory_meta"] = trajectory_meta(as, tr);
  return finish(rep, doc, dir / "decay_report.json");
}

int cmd_dirac(const Options& o) {
  const auto dir = prepare_out(o);
  const Tolerances tol{o.tol_abs, o.tol_rel};
  const Assembly as = assemble(load_scenario(o.scenario));
  auto ph = ph_checks(as, nullptr, o.seed, tol);
  json doc;
  doc["settings"] = settings_json(o);
  doc["audits"] = to_json(ph.rows);
  doc["ph"] = ph.section;
  doc["block_form"] = DiracOperator(as.X).describe();
  doc["summary"] = {{"rows", ph.rows.rows().size()}, {"failures", ph.rows.failures()}};
  return finish(ph.rows, doc, dir / "dirac_report.json");
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--scenario", o.scenario, "scenario JSON file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--eps", o.eps, "Young parameter in (0, 2)");
  cmd->add_option("--tol-abs", o.tol_abs, "absolute audit tolerance (times problem scale)");
  cmd->add_option("--tol-rel", o.tol_rel, "relative audit tolerance");
  cmd->add_option("--seed", o.seed, "seed for random structural checks");
  cmd->add_option("--jobs", o.jobs, "parallel audits")->check(CLI::PositiveNumber);
}

} // namespace

int run(int argc, char** argv) {
  CLI::App app{"Field-circuit MQS simulator and passivity auditor"};
  app.require_subcommand(1);
  Options o;
  auto* sim = app.add_subcommand("simulate", "write trajectory CSV and state dump");
  auto* cst = app.add_subcommand("constants", "write the constants report");
  auto* aud = app.add_subcommand("audit", "simulate and audit every estimate");
  auto* dec = app.add_subcommand("decay", "free dynamics (v = 0) and decay audits");
  auto* dir = app.add_subcommand("dirac-check", "structural port-Hamiltonian checks");
  for (auto* cmd : {sim, cst, aud, dec, dir}) add_common(cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    if (!(o.eps > 0.0 && o.eps < 2.0)) throw Error("--eps must lie in (0, 2)");
    if (*sim) return cmd_simulate(o);
    if (*cst) return cmd_constants(o);
    if (*aud) return cmd_audit(o);
    if (*dec) return cmd_decay(o);
    if (*dir) return cmd_dirac(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

} // namespace mqs
