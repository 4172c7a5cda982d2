#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "lqmfg/lqmfg.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit : int { kOk = 0, kUsage = 1, kInvalid = 2, kPositivity = 3, kCheckFailed = 4 };

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  int N = 100;
  int M = 1;
  std::string Ns = "50,200,800,3200";
  std::string out = ".";
  int threads = 0;
  int substeps = 10;
  int K = 0;
  bool sigma = false;
  bool rho = false;
  bool record = false;
  bool probe = true;
  bool check = false;
  std::string manifest;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int worker_count(const Options& o) {
  if (o.threads > 0) return o.threads;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

lqmfg::ProblemSpec load(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  lqmfg::ProblemSpec p = lqmfg::load_problem(read_text(o.config));
  if (o.K > 0) p = lqmfg::with_grid(p, o.K);
  return p;
}

fs::path out_dir(const Options& o) {
  if (!fs::is_directory(o.out)) throw UsageError("output directory '" + o.out + "' does not exist");
  return fs::path(o.out);
}

std::vector<int> parse_ns(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--Ns: bad entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--Ns is empty");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write '" + path.string() + "'");
  f << j.dump(2) << '\n';
}

lqmfg::SolverOptions solver_options(const Options& o) {
  lqmfg::SolverOptions s;
  s.substeps = o.substeps;
  return s;
}

int cmd_validate(const Options& o) {
  const auto p = load(o);
  const auto r = lqmfg::validate(p);
  std::cout << r.to_string();
  std::cout << (r.passed() ? "valid\n" : "invalid\n");
  return r.passed() ? kOk : kInvalid;
}

int cmd_riccati(const Options& o) {
  const auto p = load(o);
  const auto dir = out_dir(o);
  const auto report = lqmfg::validate(p);
  if (!report.passed()) {
    std::cerr << report.to_string();
    return kInvalid;
  }
  const auto opts = solver_options(o);
  const auto Pi = lqmfg::solve_pi(p, opts);
  {
    auto f = lqmfg::csv::open((dir / "pi.csv").string());
    lqmfg::write_path_csv(f, p.grid, "Pi", Pi);
  }
  std::cout << "Pi(0) =\n" << Pi.front() << '\n';
  if (o.sigma || o.rho) {
    const auto Sigma = lqmfg::solve_sigma(p, opts);
    auto f = lqmfg::csv::open((dir / "sigma.csv").string());
    lqmfg::write_path_csv(f, p.grid, "Sigma", Sigma);
    if (o.rho) {
      const auto rho = lqmfg::solve_rho(p, Sigma, opts);
      auto g = lqmfg::csv::open((dir / "rho.csv").string());
      lqmfg::write_path_csv(g, p.grid, "rho", rho);
    }
  }
  return kOk;
}

json estimate_json(const lqmfg::Estimate& e) { return {{"mean", e.mean}, {"se", e.se}, {"replications", e.samples}}; }

int cmd_simulate(const Options& o) {
  const auto p = load(o);
  const auto dir = out_dir(o);
  const auto sol = lqmfg::equilibrium_solution(p, solver_options(o));
  lqmfg::SimulationOptions so;
  so.limit = true;
  so.record_paths = o.record;
  const auto res = lqmfg::simulate_population(p, sol, {o.N, o.M, o.seed, worker_count(o)}, so);

  std::vector<double> mean_gap, agent_gap, cost_gap;
  for (const auto& rep : res.reps) {
    mean_gap.push_back(rep.sup_mean_gap);
    agent_gap.push_back(lqmfg::agent_mean(rep.sup_agent_gap));
    double c = 0.0;
    for (std::size_t i = 0; i < rep.cost_N.size(); ++i) c += std::abs(rep.cost_N[i] - rep.cost_limit[i]);
    cost_gap.push_back(c / static_cast<double>(rep.cost_N.size()));
  }
  const auto fig = lqmfg::figure_gaps(res.reps.front());
  const json summary{{"N", o.N},
                     {"M", o.M},
                     {"seed", o.seed},
                     {"sup_mean_gap", estimate_json(lqmfg::mc_estimate(mean_gap))},
                     {"sup_agent_gap", estimate_json(lqmfg::mc_estimate(agent_gap))},
                     {"cost_gap", estimate_json(lqmfg::mc_estimate(cost_gap))},
                     {"cost_N_agent0", estimate_json(lqmfg::evaluate_cost_N(res, 0))},
                     {"cost_limit_agent0", estimate_json(lqmfg::evaluate_cost_limit(res, 0))},
                     {"first_replication", {{"rms_x", fig.rms_x}, {"sup_x", fig.sup_x}, {"rms_u", fig.rms_u}, {"sup_u", fig.sup_u}}}};
  write_json(dir / "summary.json", summary);
  {
    auto f = lqmfg::csv::open((dir / "averages.csv").string());
    lqmfg::write_average_csv(f, p.grid, res.reps.front());
  }
  if (o.record) {
    auto f = lqmfg::csv::open((dir / "paths.csv").string());
    lqmfg::write_population_csv(f, res);
  }
  std::cout << summary.dump(2) << '\n';
  return kOk;
}

int cmd_nash(const Options& o) {
  const auto p = load(o);
  const auto dir = out_dir(o);
  const auto Ns = parse_ns(o.Ns);
  const auto sol = lqmfg::equilibrium_solution(p, solver_options(o));
  const int threads = worker_count(o);
  const auto sweep = lqmfg::convergence_sweep(p, sol, Ns, o.M, o.seed, threads);

  json report{{"sweeps", json::array()}};
  {
    auto f = lqmfg::csv::open((dir / "slopes.csv").string());
    f << "quantity,N,mean,se,slope,slope_half_width\n";
    auto g = lqmfg::csv::open((dir / "sweep_samples.csv").string());
    for (const auto* c : {&sweep.mean_gap, &sweep.agent_gap, &sweep.cost_gap, &sweep.expected_cost_gap}) {
      report["sweeps"].push_back(c->to_json());
      for (std::size_t i = 0; i < c->Ns.size(); ++i) {
        f << c->quantity << ',' << c->Ns[i] << ',' << lqmfg::csv::fmt(c->gaps[i].mean) << ','
          << lqmfg::csv::fmt(c->gaps[i].se) << ',' << (c->fit ? lqmfg::csv::fmt(c->fit->slope) : "") << ','
          << (c->fit ? lqmfg::csv::fmt(c->fit->half_width) : "") << '\n';
      }
      std::ostringstream s;
      c->write_samples_csv(s);
      g << (c == &sweep.mean_gap ? s.str() : s.str().substr(s.str().find('\n') + 1));
      std::cout << c->quantity << ": ";
      if (c->fit) {
        std::cout << "slope " << c->fit->slope << " +- " << c->fit->half_width << '\n';
      } else {
        std::cout << "slope refused (" << c->fit_error << ")\n";
      }
    }
  }

  bool ok = sweep.mean_gap.fit && sweep.mean_gap.fit->slope >= -1.3 && sweep.mean_gap.fit->slope <= -0.7 &&
            sweep.cost_gap.fit && sweep.cost_gap.fit->slope >= -0.75 && sweep.cost_gap.fit->slope <= -0.30;
  if (o.probe) {
    std::vector<lqmfg::NashProbe> probes;
    json pj = json::array();
    const auto family = lqmfg::PerturbationFamily::standard(p.dims.m);
    for (int N : Ns) {
      probes.push_back(lqmfg::epsilon_nash_probe(p, sol, N, family, o.M, o.seed, threads));
      const auto& pr = probes.back();
      json members = json::array();
      for (std::size_t i = 0; i < pr.labels.size(); ++i)
        members.push_back({{"policy", pr.labels[i]}, {"improvement", estimate_json(pr.improvements[i])}});
      pj.push_back({{"N", N}, {"eps_hat", pr.eps_hat}, {"eps_se", pr.eps_se}, {"members", members}});
      std::cout << "N " << N << ": eps_hat " << pr.eps_hat << " (se " << pr.eps_se << ")\n";
    }
    const auto rate = lqmfg::fit_nash_rate(probes);
    report["nash"] = {{"probes", pj}, {"c", rate.c}, {"bounded", rate.bounded}, {"nonincreasing", rate.nonincreasing}};
    std::cout << "c " << rate.c << " bounded " << rate.bounded << " nonincreasing " << rate.nonincreasing << '\n';
    ok = ok && rate.bounded && rate.nonincreasing;
  }
  write_json(dir / "report.json", report);
  if (o.check && !ok) {
    std::cerr << "rate check failed\n";
    return kCheckFailed;
  }
  return kOk;
}

int cmd_portfolio(const Options& o) {
  lqmfg::PortfolioParams pp;
  int K = o.K > 0 ? o.K : 1000;
  if (!o.config.empty()) {
    const auto p = load(o);
    if (!p.portfolio) throw UsageError("config has no portfolio section");
    pp = *p.portfolio;
    K = p.grid.K;
  }
  const auto dir = out_dir(o);
  const auto r = lqmfg::reproduce_figures(pp, o.N, o.seed, dir.string(), K);
  std::cout << "rms_x " << r.rms_x << " sup_x " << r.sup_x << " rms_u " << r.rms_u << " sup_u " << r.sup_u << '\n'
            << r.figure1 << '\n'
            << r.figure2 << '\n';
  if (o.check && !(r.rms_x <= 0.05 && r.rms_u <= 0.05)) {
    std::cerr << "figure gaps above 0.05\n";
    return kCheckFailed;
  }
  return kOk;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::string& command, const Options& o, const std::vector<std::string>& args, int code,
                    double seconds, const std::string& started) {
  if (!fs::is_directory(o.out)) return;
  const json m{{"command", command},  {"config", o.config},      {"seed", o.seed},
               {"out", o.out},        {"version", kVersion},     {"started", started},
               {"wall_clock_seconds", seconds}, {"exit_code", code}, {"args", args}};
  std::ofstream f(fs::path(o.out) / "manifest.json", std::ios::binary);
  if (f) f << m.dump(2) << '\n';
}

int run(std::vector<std::string> args);

int cmd_replay(const Options& o) {
  json m;
  try {
    m = json::parse(read_text(o.manifest));
  } catch (const json::exception& e) {
    throw UsageError("bad manifest: " + std::string(e.what()));
  }
  if (!m.contains("args") || !m["args"].is_array()) throw UsageError("manifest has no args");
  auto args = m["args"].get<std::vector<std::string>>();
  if (!args.empty() && args.front() == "replay") throw UsageError("manifest records a replay");
  return run(args);
}

int dispatch(const std::string& name, const Options& o) {
  if (name == "validate") return cmd_validate(o);
  if (name == "riccati") return cmd_riccati(o);
  if (name == "simulate") return cmd_simulate(o);
  if (name == "nash") return cmd_nash(o);
  if (name == "portfolio") return cmd_portfolio(o);
  return cmd_replay(o);
}

int run(std::vector<std::string> args) {
  CLI::App app{"Indefinite LQ mean-field games with partial observation and common noise"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "problem JSON")->check(CLI::ExistingFile); };
  auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "output directory (must exist)"); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "master seed"); };
  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", o.threads, "worker cap, 0 for all cores")->check(CLI::NonNegativeNumber);
  };
  auto add_grid = [&](CLI::App* c) {
    c->add_option("--substeps", o.substeps, "RK4 substeps per interval")->check(CLI::PositiveNumber);
    c->add_option("--K", o.K, "resample the grid to K intervals")->check(CLI::NonNegativeNumber);
  };

  auto* validate = app.add_subcommand("validate", "check a problem file");
  add_config(validate);
  validate->get_option("--config")->required();
  add_out(validate);

  auto* riccati = app.add_subcommand("riccati", "solve the Riccati system and write pi.csv (sigma.csv, rho.csv)");
  add_config(riccati);
  riccati->get_option("--config")->required();
  add_out(riccati);
  add_grid(riccati);
  riccati->add_flag("--sigma", o.sigma, "also solve the mean-field Riccati equation");
  riccati->add_flag("--rho", o.rho, "also solve the offset equation (implies --sigma)");

  auto* simulate = app.add_subcommand("simulate", "N-agent population against the limit system");
  add_config(simulate);
  simulate->get_option("--config")->required();
  add_out(simulate);
  add_seed(simulate);
  add_threads(simulate);
  add_grid(simulate);
  simulate->add_option("--N", o.N, "agents")->check(CLI::PositiveNumber);
  simulate->add_option("--M", o.M, "replications")->check(CLI::PositiveNumber);
  simulate->add_flag("--record", o.record, "write per-agent paths.csv");

  auto* nash = app.add_subcommand("nash", "convergence sweeps and the epsilon-Nash probe");
  add_config(nash);
  nash->get_option("--config")->required();
  add_out(nash);
  add_seed(nash);
  add_threads(nash);
  add_grid(nash);
  nash->add_option("--Ns", o.Ns, "comma-separated population sizes, increasing");
  nash->add_option("--M", o.M, "replications per N")->check(CLI::PositiveNumber);
  nash->add_flag("!--no-probe", o.probe, "skip the deviation probe");
  nash->add_flag("--check", o.check, "exit 4 when a rate lies outside its window");

  auto* portfolio = app.add_subcommand("portfolio", "figure CSVs for the mean-variance example");
  add_config(portfolio);
  add_out(portfolio);
  add_seed(portfolio);
  portfolio->add_option("--N", o.N, "agents")->check(CLI::PositiveNumber);
  portfolio->add_option("--K", o.K, "time steps")->check(CLI::NonNegativeNumber);
  portfolio->add_flag("--check", o.check, "exit 4 when an RMS gap exceeds 0.05");

  auto* replay = app.add_subcommand("replay", "rerun the command recorded in a manifest");
  replay->add_option("--manifest", o.manifest, "manifest.json")->required()->check(CLI::ExistingFile);

  portfolio->callback([&] { o.N = portfolio->count("--N") ? o.N : 5000; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const std::string started = timestamp();
  const auto t0 = std::chrono::steady_clock::now();
  int code = kOk;
  try {
    code = dispatch(name, o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = kUsage;
  } catch (const lqmfg::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    code = kUsage;
  } catch (const lqmfg::PositivityLoss& e) {
    std::cerr << "positivity loss at t=" << e.time() << ": " << e.what() << '\n';
    code = kPositivity;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = kUsage;
  } catch (const std::exception& e) {
    std::cerr << "validation failure: " << e.what() << '\n';
    code = kInvalid;
  }
  if (name != "replay") {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(name, o, args, code, secs, started);
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
