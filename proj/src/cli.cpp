#include "thzmec/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "thzmec/config.hpp"
#include "thzmec/convex_alloc.hpp"
#include "thzmec/text_io.hpp"
#include "thzmec/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace thzmec {

namespace {

constexpr const char* kVersion = "thzmec 0.1.0";

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::string profile;
  std::string out;
  std::uint64_t seed = 0;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

Config load_cfg(const Common& c, const std::string& fallback_ini = {}) {
  Config cfg;
  if (!c.config_path.empty())
    cfg = load_config_file(c.config_path);
  else if (!c.profile.empty())
    cfg = profile_config(c.profile);
  else if (!fallback_ini.empty() && fs::exists(fallback_ini))
    cfg = load_config_file(fallback_ini);
  else
    cfg = profile_config("micro");
  apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

class Manifest {
 public:
  Manifest(fs::path dir, std::string command, const std::vector<std::string>& args, const Config& cfg,
           std::uint64_t seed)
      : path_(dir / "manifest.json") {
    j_["tool"] = kVersion;
    j_["command"] = std::move(command);
    j_["args"] = args;
    j_["profile"] = cfg.profile;
    j_["seed"] = seed;
    j_["config_hash"] = hex64(cfg.hash());
    j_["config"] = cfg.dump();
    j_["started_at"] = utc_now();
    j_["finished_at"] = nullptr;
    j_["status"] = "running";
    j_["outputs"] = json::array();
  }
  json& operator[](const char* k) { return j_[k]; }
  void add_output(const std::string& name) { j_["outputs"].push_back(name); }
  void write() { write_text(path_, j_.dump(2) + "\n"); }
  void finish() {
    j_["finished_at"] = utc_now();
    j_["status"] = "ok";
    write();
  }

 private:
  fs::path path_;
  json j_;
};

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::path p(out);
  fs::create_directories(p);
  return p;
}

void write_eval_outputs(const fs::path& dir, const std::string& prefix, const std::string& policy,
                        const EvalReport& rep, Manifest& man) {
  write_episodes_csv((dir / (prefix + "_episodes.csv")).string(), rep.episodes);
  write_slots_csv((dir / (prefix + "_slots.csv")).string(), rep.slots);
  write_mus_csv((dir / (prefix + "_mus.csv")).string(), rep.mus);
  json s;
  s["policy"] = policy;
  s["episodes"] = rep.episodes.size();
  s["mean_cost"] = rep.mean_cost;
  s["violations"] = rep.violations;
  json per = json::array();
  for (const auto& e : rep.episodes) per.push_back({{"episode", e.episode}, {"mean_cost", e.mean_cost}, {"return", e.ret}});
  s["per_episode"] = per;
  write_text(dir / (prefix + "_summary.json"), s.dump(2) + "\n");
  for (const char* f : {"_episodes.csv", "_slots.csv", "_mus.csv", "_summary.json"}) man.add_output(prefix + f);
}

// --- subcommands ----------------------------------------------------------------

int cmd_train(const Common& c, const std::string& algo_s, int episodes, const std::vector<std::string>& args,
              std::ostream& out) {
  const Algo algo = parse_algo(algo_s);
  const Config cfg = load_cfg(c);
  const fs::path dir = prepare_out(c.out);
  write_text(dir / "config.ini", cfg.dump());
  Manifest man(dir, "train", args, cfg, c.seed);
  man["algo"] = algo_name(algo);
  const int n_eps = episodes > 0 ? episodes : episodes_for_budget(cfg);
  man["episodes"] = n_eps;
  man.add_output("config.ini");
  man.write();

  TrainOptions opts;
  opts.seed = c.seed;
  opts.episodes = n_eps;
  const int every = std::max(1, n_eps / 10);
  opts.on_episode = [&](const EpisodeRow& r) {
    if ((r.episode + 1) % every == 0 || r.episode + 1 == n_eps)
      out << "episode " << r.episode + 1 << "/" << n_eps << " return " << fmt_double(r.ret) << " cost "
          << fmt_double(r.mean_cost) << "\n";
  };
  TrainResult res = train(cfg, algo, opts);
  write_updates_csv((dir / "train_log.csv").string(), res.updates);
  write_episodes_csv((dir / "episodes.csv").string(), res.episodes);
  write_slots_csv((dir / "slots.csv").string(), res.slots);
  res.bundle->save((dir / "checkpoint.bin").string());
  for (const char* f : {"train_log.csv", "episodes.csv", "slots.csv", "checkpoint.bin"}) man.add_output(f);

  EvalOptions eo;
  eo.episodes = cfg.train.eval_episodes;
  eo.seed = c.seed;
  const EvalReport rep = evaluate(res.bundle.get(), cfg, eo);
  write_eval_outputs(dir, "eval", std::string(algo_name(algo)), rep, man);
  eo.fairness = FairnessKind::kAll;
  const EvalReport base = evaluate(nullptr, cfg, eo);
  write_eval_outputs(dir, "baseline", "fairness_all", base, man);
  man["env_steps"] = res.env_steps;
  man["eval_mean_cost"] = rep.mean_cost;
  man["baseline_mean_cost"] = base.mean_cost;
  man.finish();
  out << "eval mean cost " << fmt_double(rep.mean_cost) << " (fairness_all " << fmt_double(base.mean_cost) << ")\n";
  return kExitOk;
}

std::unique_ptr<PolicyBundle> load_checkpoint(const std::string& path, const Config& cfg) {
  if (path.empty()) throw MissingArtifact("a checkpoint is required (--checkpoint)");
  if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path);
  return PolicyBundle::load(path, cfg);
}

std::string sibling_ini(const std::string& checkpoint) {
  if (checkpoint.empty()) return {};
  return (fs::path(checkpoint).parent_path() / "config.ini").string();
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& baseline, int episodes,
             const std::vector<std::string>& args, std::ostream& out) {
  const Config cfg = load_cfg(c, sibling_ini(checkpoint));
  std::optional<FairnessKind> kind;
  if (!baseline.empty()) kind = parse_fairness(baseline);
  std::unique_ptr<PolicyBundle> bundle;
  if (!kind || *kind != FairnessKind::kAll) bundle = load_checkpoint(checkpoint, cfg);
  const fs::path dir = prepare_out(c.out);
  Manifest man(dir, "eval", args, cfg, c.seed);
  man["checkpoint"] = checkpoint;
  man["baseline"] = baseline;
  man.write();

  EvalOptions eo;
  eo.episodes = episodes > 0 ? episodes : cfg.train.eval_episodes;
  eo.seed = c.seed;
  eo.fairness = kind;
  const EvalReport rep = evaluate(bundle.get(), cfg, eo);
  const std::string policy = !baseline.empty() ? baseline : std::string(algo_name(bundle->algo()));
  write_eval_outputs(dir, "eval", policy, rep, man);
  man["eval_mean_cost"] = rep.mean_cost;
  man.finish();
  out << policy << " mean cost " << fmt_double(rep.mean_cost) << " over " << eo.episodes << " episodes\n";
  return kExitOk;
}

int cmd_sweep(const Common& c, const std::string& checkpoint, const std::string& alphas_s, int episodes,
              const std::vector<std::string>& args, std::ostream& out) {
  std::vector<double> alphas;
  for (const auto& tok : split(alphas_s, ',')) {
    const auto v = parse_double(tok);
    if (!v || *v < 0.0 || *v > 1.0) throw ConfigError("--alphas: '" + tok + "' is not a ratio in [0, 1]");
    alphas.push_back(*v);
  }
  const Config cfg = load_cfg(c, sibling_ini(checkpoint));
  auto bundle = load_checkpoint(checkpoint, cfg);
  const fs::path dir = prepare_out(c.out);
  Manifest man(dir, "sweep-alpha", args, cfg, c.seed);
  man["checkpoint"] = checkpoint;
  man.write();
  const int eps = episodes > 0 ? episodes : cfg.train.eval_episodes;
  const auto rows = sweep_alpha_fixed(*bundle, cfg, alphas, eps, c.seed);
  write_sweep_csv((dir / "sweep.csv").string(), rows);
  man.add_output("sweep.csv");
  man.finish();
  for (const auto& r : rows) out << r.label << " " << fmt_double(r.mean_cost) << "\n";
  return kExitOk;
}

// --- export ---------------------------------------------------------------------

double cell(const CsvTable& t, const std::vector<std::string>& row, const char* col) {
  const int i = t.column(col);
  if (i < 0) throw MissingArtifact(std::string("column '") + col + "' missing in export input");
  const auto v = parse_double(row[static_cast<std::size_t>(i)]);
  return v ? *v : std::nan("");
}

CsvTable need_csv(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact("run directory lacks " + p.filename().string());
  return read_csv(p.string());
}

std::string policy_of(const fs::path& summary) {
  if (!fs::exists(summary)) return "policy";
  const auto j = json::parse(read_file(summary.string()));
  return j.value("policy", "policy");
}

int cmd_export(const std::string& run, const std::string& out_s, std::ostream& out) {
  const fs::path rd(run);
  if (run.empty() || !fs::is_directory(rd)) throw MissingArtifact("run directory not found: " + run);
  const fs::path dir = out_s.empty() ? rd / "export" : fs::path(out_s);
  fs::create_directories(dir);
  if (!fs::exists(rd / "config.ini")) throw MissingArtifact("run directory lacks config.ini");
  const Config cfg = load_config_file((rd / "config.ini").string());

  const CsvTable episodes = need_csv(rd / "episodes.csv");
  const CsvTable slots = need_csv(rd / "eval_slots.csv");
  const CsvTable mus = need_csv(rd / "eval_mus.csv");

  std::vector<std::string> written;
  auto path_of = [&](const char* name) {
    written.emplace_back(name);
    return (dir / name).string();
  };

  {
    CsvWriter w(path_of("fig_rewards.csv"), {"episode", "role", "return"});
    for (const auto& row : episodes.rows)
      for (Role r : kAllRoles) {
        const std::string col = "return_" + std::string(role_name(r));
        w.row({row[static_cast<std::size_t>(episodes.column("episode"))], std::string(role_name(r)),
               fmt_double(cell(episodes, row, col.c_str()))});
      }
  }
  {
    CsvWriter w(path_of("fig_allocations.csv"), {"episode", "slot", "uav", "variable", "value", "cap"});
    const std::pair<const char*, double> vars[] = {
        {"sum_omega_ul", 1.0}, {"sum_omega_dl", 1.0}, {"sum_power", cfg.net.p_max_watt}};
    for (const auto& row : slots.rows)
      for (const auto& [name, cap] : vars)
        w.row({row[0], row[1], row[2], name, fmt_double(cell(slots, row, name)), fmt_double(cap)});
  }
  {
    // Mean over episodes of the per-slot sum of UAV utilities, per policy.
    std::vector<std::pair<std::string, const CsvTable*>> sources = {{policy_of(rd / "eval_summary.json"), &slots}};
    CsvTable base;
    if (fs::exists(rd / "baseline_slots.csv")) {
      base = read_csv((rd / "baseline_slots.csv").string());
      sources.emplace_back(policy_of(rd / "baseline_summary.json"), &base);
    }
    CsvWriter w(path_of("fig_utility_slot.csv"), {"policy", "slot", "utility"});
    for (const auto& [policy, t] : sources) {
      std::map<int, double> sum;
      std::map<int, std::set<int>> eps;
      for (const auto& row : t->rows) {
        const int slot = static_cast<int>(cell(*t, row, "slot"));
        sum[slot] += cell(*t, row, "utility");
        eps[slot].insert(static_cast<int>(cell(*t, row, "episode")));
      }
      for (const auto& [slot, s] : sum)
        w.row({policy, std::to_string(slot), fmt_double(s / static_cast<double>(eps[slot].size()))});
    }
  }
  {
    const char* cols[] = {"omega_ul", "omega_dl", "p_dl", "alpha", "rate_ul", "rate_dl", "distance", "delay"};
    std::map<int, std::pair<int, std::vector<double>>> acc;  // mu -> (uav, sums)
    std::map<int, int> n;
    for (const auto& row : mus.rows) {
      const int mu = static_cast<int>(cell(mus, row, "mu"));
      auto& a = acc[mu];
      a.first = static_cast<int>(cell(mus, row, "uav"));
      a.second.resize(std::size(cols), 0.0);
      for (std::size_t i = 0; i < std::size(cols); ++i) a.second[i] += cell(mus, row, cols[i]);
      ++n[mu];
    }
    std::vector<std::string> header = {"mu", "uav"};
    for (const char* c : cols) header.emplace_back(c);
    CsvWriter w(path_of("fig_per_mu.csv"), header);
    for (const auto& [mu, a] : acc) {
      std::vector<std::string> r = {std::to_string(mu), std::to_string(a.first)};
      for (double s : a.second) r.push_back(fmt_double(s / n[mu]));
      w.row(r);
    }
  }
  {
    CsvWriter w(path_of("fig_trajectory.csv"), {"uav", "slot", "x", "y"});
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : slots.rows)
      if (cell(slots, row, "episode") == 0.0) rows.push_back(row);
    std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
      return cell(slots, a, "uav") < cell(slots, b, "uav");
    });
    for (const auto& row : rows)
      w.row({row[static_cast<std::size_t>(slots.column("uav"))], row[static_cast<std::size_t>(slots.column("slot"))],
             fmt_double(cell(slots, row, "x")), fmt_double(cell(slots, row, "y"))});
  }

  std::vector<std::pair<std::string, std::string>> members;
  for (const auto& e : fs::directory_iterator(rd)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".csv" || ext == ".json" || ext == ".ini") members.emplace_back("run/" + e.path().filename().string(), e.path().string());
  }
  for (const auto& f : written) members.emplace_back("figures/" + f, (dir / f).string());
  write_tar((dir / "export.tar").string(), members);
  out << "exported " << written.size() << " figure tables and export.tar to " << dir.string() << "\n";
  return kExitOk;
}

void octal(char* field, std::size_t width, std::uint64_t v) {
  // width includes the terminating NUL
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(v));
}

}  // namespace

void write_tar(const std::string& path, std::vector<std::pair<std::string, std::string>> files) {
  std::sort(files.begin(), files.end());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& [name, src] : files) {
    if (name.size() >= 100) throw std::runtime_error("archive member name too long: " + name);
    const std::string data = read_file(src);
    char h[512] = {};
    std::copy(name.begin(), name.end(), h);
    octal(h + 100, 8, 0644);
    octal(h + 108, 8, 0);
    octal(h + 116, 8, 0);
    octal(h + 124, 12, data.size());
    octal(h + 136, 12, 0);
    std::fill(h + 148, h + 156, ' ');
    h[156] = '0';
    std::copy_n("ustar", 6, h + 257);
    h[263] = '0';
    h[264] = '0';
    unsigned sum = 0;
    for (unsigned char ch : h) sum += ch;
    std::snprintf(h + 148, 7, "%06o", sum);
    h[154] = '\0';
    h[155] = ' ';
    out.write(h, 512);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    const std::size_t pad = (512 - data.size() % 512) % 512;
    out.write(std::string(pad, '\0').data(), static_cast<std::streamsize>(pad));
  }
  out.write(std::string(1024, '\0').data(), 1024);
  if (!out) throw std::runtime_error("short write to " + path);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"THz MEC-UAV simulator and multi-agent PPO trainer", "thzmec"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common c;
  auto add_common = [&](CLI::App* sc, bool with_config) {
    if (with_config) {
      auto* cf = sc->add_option("--config", c.config_path, "INI config file");
      auto* pf = sc->add_option("--profile", c.profile, "built-in profile (micro, table2, table2-full)");
      cf->excludes(pf);
    }
    sc->add_option("--seed", c.seed, "base seed")->default_val(0);
    sc->add_option("--out", c.out, "output directory");
  };

  std::string algo = "rmappo";
  int episodes = 0;
  auto* train = app.add_subcommand("train", "train a policy bundle");
  add_common(train, true);
  train->add_option("--algo", algo, "rmappo or gmappo")->check(CLI::IsMember({"rmappo", "gmappo"}));
  train->add_option("--episodes", episodes, "episodes (default: ppo.max_steps / env.num_slots)");

  std::string checkpoint, baseline;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a fairness baseline");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--baseline", baseline, "fairness_all, fairness_w or fairness_p")
      ->check(CLI::IsMember({"fairness_all", "fairness_w", "fairness_p"}));
  eval->add_option("--episodes", episodes, "evaluation episodes (default: train.eval_episodes)");

  std::string alphas = "0.3,0.5,0.7";
  auto* sweep = app.add_subcommand("sweep-alpha", "compare fixed offloading ratios with the learned one");
  add_common(sweep, true);
  sweep->add_option("--checkpoint", checkpoint, "checkpoint file");
  sweep->add_option("--alphas", alphas, "comma-separated fixed ratios")->default_val("0.3,0.5,0.7");
  sweep->add_option("--episodes", episodes, "evaluation episodes per row");

  std::string run;
  auto* exp = app.add_subcommand("export", "write plot-ready tables and an archive for a run directory");
  exp->add_option("--run", run, "run directory produced by train")->required();
  add_common(exp, false);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(c, algo, episodes, args, out);
    if (eval->parsed()) {
      if (checkpoint.empty() && baseline.empty()) throw MissingArtifact("eval needs --checkpoint or --baseline");
      return cmd_eval(c, checkpoint, baseline, episodes, args, out);
    }
    if (sweep->parsed()) return cmd_sweep(c, checkpoint, alphas, episodes, args, out);
    if (exp->parsed()) return cmd_export(run, c.out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointConfigMismatch& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    err << "missing artifact: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const InfeasibleBudgetError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const InfeasibleLinkError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const DomainError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace thzmec
