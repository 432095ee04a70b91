// nicreg command-line entry point.
//
// Exit codes: 0 success, 1 domain or runtime failure, 2 usage or config error.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nicreg/coding_models.hpp"
#include "nicreg/errors.hpp"
#include "nicreg/eval_harness.hpp"
#include "nicreg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nicreg;

namespace {

constexpr int kOk = 0;
constexpr int kDomainFailure = 1;
constexpr int kUsage = 2;

std::atomic<bool> g_cancel{false};

extern "C" void on_sigint(int) {
  g_cancel.store(true);
  std::signal(SIGINT, SIG_DFL);  // a second Ctrl-C kills immediately
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string quote_arg(const std::string& a) {
  if (!a.empty() && a.find_first_of(" \t\"'\\$") == std::string::npos) return a;
  std::string q = "'";
  for (char c : a) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

// The program name is normalized so artifacts do not depend on how the
// binary was invoked.
std::string command_line(int argc, char** argv) {
  std::string s = "nicreg";
  for (int i = 1; i < argc; ++i) s += " " + quote_arg(argv[i]);
  return s;
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  fs::path out = ".";
  std::size_t jobs = 1;
  bool no_cache = false;

  void add(CLI::App* cmd, bool with_run_options = true) {
    cmd->add_option("-c,--config", path, "train config JSON (defaults when omitted)");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set alpha=0 (repeatable)");
    cmd->add_option("-o,--out", out, "output root; runs are stored under <out>/runs/<hash>")
        ->capture_default_str();
    if (with_run_options) {
      cmd->add_option("-j,--jobs", jobs, "parallel training runs")->check(CLI::PositiveNumber)
          ->capture_default_str();
      cmd->add_flag("--no-cache", no_cache, "retrain even when a completed run exists");
    }
  }

  // Config problems are usage errors.
  TrainConfig resolve(json* resolved_out) const {
    try {
      json user = path.empty() ? json(nullptr) : read_config_file(path);
      json full = resolve_config_json(user, overrides);
      TrainConfig c = train_config_from_json(full);
      if (resolved_out != nullptr) *resolved_out = to_json(c);
      return c;
    } catch (const Error& e) {
      throw UsageError(std::string("config error: ") + e.what());
    }
  }
};

void print_resolved(const std::string& what, const json& config, const std::string& seeds) {
  std::cerr << "[" << what << "] config: " << config.dump() << "\n";
  std::cerr << "[" << what << "] seed: " << seeds << "\n";
}

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (auto v : seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

TrainOptions run_options(const ConfigArgs& a, const std::string& cmd) {
  TrainOptions o;
  o.output_root = a.out;
  o.command_line = cmd;
  o.jobs = a.jobs;
  o.reuse_cache = !a.no_cache;
  o.cancel = &g_cancel;
  o.on_run_done = [](const RunRecord& r) {
    std::cerr << (r.cached ? "cached   " : "trained  ") << r.hash << "  lambda=" << r.lambda
              << " alpha=" << r.alpha << " seed=" << r.seed << "  " << to_string(r.status);
    if (!r.rows.empty()) {
      std::fprintf(stderr, "  rate=%.4f bpd  quality=%.3f dB", r.rows.back().rate_bpd,
                   r.rows.back().quality_db);
    }
    if (!r.message.empty()) std::cerr << "  (" << r.message << ")";
    std::cerr << std::endl;
  };
  return o;
}

int summarize(const std::vector<RunRecord>& runs) {
  std::size_t trained = 0, cached = 0, bad = 0;
  for (const auto& r : runs) {
    if (r.cached) ++cached; else ++trained;
    if (!r.ok()) ++bad;
  }
  std::cout << "runs: " << runs.size() << " (" << trained << " new, " << cached << " cached, "
            << bad << " not completed)\n";
  if (g_cancel.load()) std::cout << "interrupted: in-flight runs were marked aborted\n";
  return bad == 0 ? kOk : kDomainFailure;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  std::size_t max_alphabet = 64;
  unsigned jobs = 1;
  std::string out;
  std::string replay;
  bool inject_fault = false;
};

int cmd_verify(const VerifyArgs& a, const std::string& cmd) {
  json resolved = {{"count", a.count}, {"max_alphabet", a.max_alphabet}, {"jobs", a.jobs},
                   {"inject_fault", a.inject_fault}};
  print_resolved("verify-identities", resolved, std::to_string(a.seed));

  json report;
  bool pass = true;
  if (!a.replay.empty()) {
    json doc;
    try {
      doc = read_config_file(a.replay);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    const std::string kind = doc.value("kind", "");
    const json& spec = doc.contains("spec") ? doc["spec"] : doc;
    IdentityReport r;
    if (kind == "direct" || (kind.empty() && spec.contains("codebook"))) {
      r = verify_direct_identities(direct_spec_from_json(spec));
    } else {
      r = verify_transform_identities(transform_spec_from_json(spec));
    }
    pass = r.all_pass();
    report = {{"command", cmd}, {"replay", a.replay}, {"report", to_json(r)}, {"pass", pass}};
  } else {
    BatchOptions opt;
    opt.count = a.count;
    opt.seed = a.seed;
    opt.max_alphabet = a.max_alphabet;
    opt.jobs = a.jobs;
    opt.inject_fault = a.inject_fault;
    const auto entries = verify_random_batch(opt);
    std::map<std::string, std::size_t> total, failed;
    std::size_t residual_instances = 0;
    double max_gap = 0.0;
    json failures = json::array();
    for (const auto& e : entries) {
      ++total[e.kind()];
      for (const auto& c : e.report.identities) max_gap = std::max(max_gap, c.gap);
      if (e.kind() == "transform" && e.report.residual_u_given_xhat > 0.01) ++residual_instances;
      if (!e.report.all_pass()) {
        ++failed[e.kind()];
        if (failures.size() < 20) {
          failures.push_back({{"kind", e.kind()}, {"spec_seed", e.spec_seed},
                              {"spec", e.spec_json()}, {"report", to_json(e.report)}});
        }
      }
    }
    pass = failed.empty();
    report = {{"command", cmd},
              {"seed", a.seed},
              {"count", a.count},
              {"max_alphabet", a.max_alphabet},
              {"direct", {{"checked", total["direct"]}, {"failed", failed["direct"]}}},
              {"transform",
               {{"checked", total["transform"]},
                {"failed", failed["transform"]},
                {"residual_above_0.01_bits", residual_instances}}},
              {"max_gap_bits", max_gap},
              {"pass", pass},
              {"failures", failures}};
  }
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(a.out, text);
    std::cout << (pass ? "all identities hold" : "identity failures") << "; report written to "
              << a.out << "\n";
  }
  return pass ? kOk : kDomainFailure;
}

int cmd_train(const ConfigArgs& a, const std::string& cmd) {
  json resolved;
  const TrainConfig c = a.resolve(&resolved);
  print_resolved("train", resolved, seed_list(c.seeds));
  const auto runs = train_grid(c, run_options(a, cmd));
  for (const auto& r : runs) std::cout << r.hash << ' ' << to_string(r.status) << ' ' << r.directory.string() << "\n";
  return summarize(runs);
}

// Loads completed runs of the grid from the cache without training.
std::vector<RunRecord> cached_runs(const TrainConfig& c, const fs::path& out) {
  std::vector<RunRecord> runs;
  for (double l : c.lambdas) {
    for (double al : c.alphas) {
      for (auto s : c.seeds) {
        const std::string h = config_hash(run_config_json(c, l, al, s));
        const fs::path dir = out / "runs" / h;
        if (!fs::exists(dir / "run.json")) {
          throw Error(ErrorKind::kIo, "run " + h + " (lambda=" + format_number(l) + " alpha=" +
                                          format_number(al) + " seed=" + std::to_string(s) +
                                          ") is not trained; run `nicreg train` first");
        }
        runs.push_back(load_run(dir));
      }
    }
  }
  return runs;
}

struct EvalArgs {
  ConfigArgs cfg;
  std::string csv;
  std::string svg;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
};

int cmd_eval(const EvalArgs& a, const std::string& cmd) {
  json resolved;
  const TrainConfig c = a.cfg.resolve(&resolved);
  print_resolved("eval", resolved, seed_list(c.seeds));
  const auto runs = cached_runs(c, a.cfg.out);
  ReportContext ctx{cmd, config_hash(resolved), c.seeds};

  std::ostringstream os;
  os << report_header("final held-out metrics per run", ctx);
  os << "lambda,alpha,seed,rate_bpd,mse,quality_db,reg_bits,status,run\n";
  std::vector<std::pair<std::string, RdCurve>> curves;
  std::map<std::pair<double, std::uint64_t>, std::vector<const RunRecord*>> groups;
  const std::set<double> want_a(a.alphas.begin(), a.alphas.end());
  const std::set<std::uint64_t> want_s(a.seeds.begin(), a.seeds.end());
  for (const auto& r : runs) {
    if (!want_a.empty() && want_a.count(r.alpha) == 0) continue;
    if (!want_s.empty() && want_s.count(r.seed) == 0) continue;
    if (r.rows.empty()) continue;
    const MetricRow& m = r.final_row();
    os << format_number(r.lambda) << ',' << format_number(r.alpha) << ',' << r.seed << ','
       << format_number(m.rate_bpd) << ',' << format_number(m.mse) << ','
       << format_number(m.quality_db) << ',' << format_number(m.reg_bits) << ','
       << to_string(r.status) << ',' << r.hash << '\n';
    if (r.ok()) groups[{r.alpha, r.seed}].push_back(&r);
  }
  for (const auto& [key, rs] : groups) {
    std::ostringstream label;
    label << "alpha=" << key.first << " seed=" << key.second;
    curves.emplace_back(label.str(), curve_from_runs(rs));
  }
  const std::string text = os.str();
  if (a.csv.empty()) std::cout << text; else write_text_file(a.csv, text);
  if (!a.svg.empty()) {
    write_text_file(a.svg, rd_plot_svg(curves, "rate-distortion (held-out)",
                                       {"config " + ctx.config_hash}));
  }
  bool all_ok = true;
  for (const auto& r : runs) all_ok = all_ok && r.ok();
  return all_ok ? kOk : kDomainFailure;
}

struct BdArgs {
  std::string anchor, test, json_out;
};

int cmd_bd(const BdArgs& a, const std::string& cmd) {
  print_resolved("bd-rate", {{"anchor", a.anchor}, {"test", a.test}}, "-");
  const RdCurve anchor = read_curve_csv(a.anchor);
  const RdCurve test = read_curve_csv(a.test);
  const BdResult r = bd_rate(anchor, test);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::printf("BD-rate: %.2f%%\n", r.bd_rate_percent);
  if (!a.json_out.empty()) {
    json doc = to_json(r);
    doc["command"] = cmd;
    write_text_file(a.json_out, doc.dump(2) + "\n");
  }
  return kOk;
}

struct SweepArgs {
  ConfigArgs cfg;
  std::string csv, svg;
};

int cmd_sweep(const SweepArgs& a, const std::string& cmd) {
  json resolved;
  const TrainConfig c = a.cfg.resolve(&resolved);
  if (std::find(c.alphas.begin(), c.alphas.end(), 0.0) == c.alphas.end()) {
    throw UsageError("sweep-alpha needs alpha = 0 in the alpha list (the anchor)");
  }
  print_resolved("sweep-alpha", resolved, seed_list(c.seeds));
  const auto runs = train_grid(c, run_options(a.cfg, cmd));
  const int status = summarize(runs);
  if (g_cancel.load()) return kDomainFailure;
  const AlphaSweepTable t = alpha_sweep_report(runs);
  ReportContext ctx{cmd, config_hash(resolved), c.seeds};
  const fs::path csv = a.csv.empty() ? a.cfg.out / "alpha_sweep.csv" : fs::path(a.csv);
  const fs::path svg = a.svg.empty() ? a.cfg.out / "alpha_sweep.svg" : fs::path(a.svg);
  const std::string text = alpha_sweep_csv(t, ctx);
  write_text_file(csv, text);
  write_text_file(svg, alpha_sweep_svg(t, ctx));
  std::cout << text;
  std::cout << "wrote " << csv.string() << " and " << svg.string() << "\n";
  return status;
}

struct ShiftArgs {
  ConfigArgs cfg;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::size_t samples = 4096;
  std::string csv;
};

int cmd_shift(const ShiftArgs& a, const std::string& cmd) {
  json resolved;
  TrainConfig c = a.cfg.resolve(&resolved);
  if (a.alpha <= 0.0) throw UsageError("--alpha must be > 0 (the regularized model)");
  const std::uint64_t seed = a.seed != 0 ? a.seed : c.seeds.front();
  c.alphas = {0.0, a.alpha};
  c.seeds = {seed};
  resolved = to_json(c);
  print_resolved("domain-shift", resolved, std::to_string(seed));
  const auto runs = train_grid(c, run_options(a.cfg, cmd));
  if (summarize(runs) != kOk) return kDomainFailure;

  std::vector<CodecModel> anchor, reg;
  anchor.reserve(c.lambdas.size());
  reg.reserve(c.lambdas.size());
  for (const auto& r : runs) {
    if (r.checkpoint.empty()) throw Error(ErrorKind::kIo, "run " + r.hash + " has no checkpoint");
    (r.alpha == 0.0 ? anchor : reg).push_back(CodecModel::load(r.checkpoint / "codec"));
  }
  std::vector<CodecModel*> ap, rp;
  for (auto& m : anchor) ap.push_back(&m);
  for (auto& m : reg) rp.push_back(&m);
  const auto t = domain_shift_report(ap, rp, c.source, default_shift_cases(), seed, a.samples);
  const std::string text = domain_shift_csv(t, {cmd, config_hash(resolved), {seed}});
  const fs::path csv = a.csv.empty() ? a.cfg.out / "domain_shift.csv" : fs::path(a.csv);
  write_text_file(csv, text);
  std::cout << text << "wrote " << csv.string() << "\n";
  return kOk;
}

struct ProbeArgs {
  ConfigArgs cfg;
  std::vector<std::string> checkpoints;
  std::size_t axes = 2;
  std::size_t points = 32;
  std::size_t bins = 32;
  std::uint64_t probe_seed = 1;
  std::string out;
};

int cmd_probe(const ProbeArgs& a, const std::string& cmd) {
  json resolved;
  const TrainConfig c = a.cfg.resolve(&resolved);
  json shown = {{"source", resolved["source"]}, {"axes", a.axes}, {"points_per_axis", a.points},
                {"bins", a.bins}, {"checkpoints", a.checkpoints}};
  print_resolved("probe-identities", shown, std::to_string(a.probe_seed));

  std::vector<fs::path> dirs;
  for (const auto& p : a.checkpoints) dirs.emplace_back(p);
  if (dirs.empty()) {
    for (const auto& r : cached_runs(c, a.cfg.out)) {
      if (!r.checkpoint.empty()) dirs.push_back(r.checkpoint / "codec");
    }
  }
  if (dirs.empty()) throw UsageError("no checkpoints to probe");

  const auto source = make_source(c.source);
  const ProbeSource probe = principal_probe(*source, a.axes, a.points, a.probe_seed);
  json results = json::array();
  bool pass = true;
  for (const auto& d : dirs) {
    json header;
    CodecModel m = CodecModel::load(d, &header);
    const IdentityProbeReport r = identity_probe(m, probe, a.bins);
    pass = pass && r.pass();
    json entry = to_json(r);
    entry["checkpoint"] = d.string();
    entry["config_hash"] = header.value("config_hash", "");
    results.push_back(entry);
    std::fprintf(stderr, "%s  max gap %.3g bits  H(U|Xhat) %.6f  %s\n", d.string().c_str(),
                 r.max_gap, r.residual_u_given_xhat, r.pass() ? "ok" : "FAIL");
  }
  json doc = {{"command", cmd}, {"probe_seed", a.probe_seed}, {"pass", pass}, {"results", results}};
  const std::string text = doc.dump(2) + "\n";
  if (a.out.empty()) std::cout << text; else write_text_file(a.out, text);
  return pass ? kOk : kDomainFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nicreg: conditional-source-entropy regularization laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify-identities",
                               "check entropy identities on random direct and transform codecs");
  v->add_option("--count", verify.count, "specs of each kind")->check(CLI::PositiveNumber)
      ->capture_default_str();
  v->add_option("--seed", verify.seed, "master seed")->capture_default_str();
  v->add_option("--max-alphabet", verify.max_alphabet, "largest source alphabet")
      ->check(CLI::PositiveNumber)->capture_default_str();
  v->add_option("-j,--jobs", verify.jobs, "worker threads")->check(CLI::PositiveNumber)
      ->capture_default_str();
  v->add_option("--out", verify.out, "write the JSON report here instead of stdout");
  v->add_option("--replay", verify.replay, "verify one serialized spec from a failure report");
  v->add_flag("--inject-fault", verify.inject_fault, "corrupt synthesis maps mid-check (testing)")
      ->group("");

  ConfigArgs train;
  auto* t = app.add_subcommand("train", "train every (lambda, alpha, seed) run of a config");
  train.add(t);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "tabulate final held-out metrics of trained runs");
  eval.cfg.add(e, false);
  e->add_option("--csv", eval.csv, "write the table here instead of stdout");
  e->add_option("--svg", eval.svg, "also plot the R-D curves");
  e->add_option("--alpha", eval.alphas, "keep only these alphas");
  e->add_option("--seed", eval.seeds, "keep only these seeds");

  BdArgs bd;
  auto* b = app.add_subcommand("bd-rate", "Bjontegaard delta rate between two R-D curves");
  b->add_option("--anchor", bd.anchor, "anchor curve CSV (rate_bpd, quality_db)")->required();
  b->add_option("--test", bd.test, "test curve CSV")->required();
  b->add_option("--json", bd.json_out, "write fit diagnostics as JSON");

  SweepArgs sweep;
  auto* s = app.add_subcommand("sweep-alpha", "train the alpha grid and report BD-rate per alpha");
  sweep.cfg.add(s);
  s->add_option("--csv", sweep.csv, "table path (default <out>/alpha_sweep.csv)");
  s->add_option("--svg", sweep.svg, "plot path (default <out>/alpha_sweep.svg)");

  ShiftArgs shift;
  auto* d = app.add_subcommand("domain-shift", "BD-rate of a regularized codec on shifted sources");
  shift.cfg.add(d);
  d->add_option("--alpha", shift.alpha, "alpha of the regularized codec")->capture_default_str();
  d->add_option("--seed", shift.seed, "training seed to use (default: first in config)");
  d->add_option("--samples", shift.samples, "vectors per shifted source")
      ->check(CLI::PositiveNumber)->capture_default_str();
  d->add_option("--csv", shift.csv, "table path (default <out>/domain_shift.csv)");

  ProbeArgs probe;
  auto* p = app.add_subcommand("probe-identities",
                               "enumerate a grid source through trained codecs and check H(U) identities");
  probe.cfg.add(p, false);
  p->add_option("--checkpoint", probe.checkpoints, "codec checkpoint dirs (default: all runs of the config)");
  p->add_option("--axes", probe.axes, "principal axes of the probe grid (1-4)")
      ->check(CLI::Range(1, 4))->capture_default_str();
  p->add_option("--points", probe.points, "grid points per axis")->check(CLI::PositiveNumber)
      ->capture_default_str();
  p->add_option("--bins", probe.bins, "reconstruction bins per dimension")
      ->check(CLI::PositiveNumber)->capture_default_str();
  p->add_option("--probe-seed", probe.probe_seed, "seed for the principal-axis estimate")
      ->capture_default_str();
  p->add_option("--report", probe.out, "write the JSON report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  std::signal(SIGINT, on_sigint);
  const std::string cmd = command_line(argc, argv);
  try {
    if (*v) return cmd_verify(verify, cmd);
    if (*t) return cmd_train(train, cmd);
    if (*e) return cmd_eval(eval, cmd);
    if (*b) return cmd_bd(bd, cmd);
    if (*s) return cmd_sweep(sweep, cmd);
    if (*d) return cmd_shift(shift, cmd);
    if (*p) return cmd_probe(probe, cmd);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const Error& err) {
    std::cerr << "error (" << to_string(err.kind()) << "): " << err.what() << "\n";
    return kDomainFailure;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDomainFailure;
  }
  return kUsage;
}
