#include "nicreg/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "nicreg/errors.hpp"
#include "nicreg/rng.hpp"

namespace nicreg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kRunFormat = "nicreg-run/1";
constexpr std::size_t kEvalChunk = 1024;

template <typename T>
std::vector<T> scalar_or_list(const nlohmann::json& v, const char* key) {
  try {
    if (v.is_array()) return v.get<std::vector<T>>();
    return {v.get<T>()};
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kInvalidArgument, std::string("config key '") + key +
                                          "' must be a number or a list of numbers");
  }
}

template <typename T>
void require_distinct(const std::vector<T>& v, const char* what) {
  std::set<T> seen(v.begin(), v.end());
  require(seen.size() == v.size(), std::string("duplicate entries in ") + what);
}

void merge_strict(nlohmann::json& base, const nlohmann::json& doc, const std::string& path) {
  require(doc.is_object(), (path.empty() ? std::string("config") : path) + " must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) fail(ErrorKind::kInvalidArgument, "unknown config key '" + where + "'");
    nlohmann::json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      merge_strict(slot, value, where);
    } else {
      slot = value;
    }
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out << text;
    if (!out) fail(ErrorKind::kIo, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

ad::Tensor rows_of(const ad::Tensor& all, std::size_t begin, std::size_t end) {
  const std::size_t cols = all.cols();
  std::vector<double> v(all.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                        all.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return ad::Tensor({end - begin, cols}, std::move(v));
}

ad::Tensor gather_rows(const ad::Tensor& all, const std::vector<std::size_t>& idx) {
  const std::size_t cols = all.cols();
  ad::Tensor out({idx.size(), cols});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(&all.data()[idx[r] * cols], cols, &out.values()[r * cols]);
  }
  return out;
}

// E[log2 q(x | xhat)] per vector on the held-out set, with eval-mode xhat.
double eval_regularizer_bits(CodecModel& codec, SourceModel& model, const ad::Tensor& x) {
  const std::size_t n = x.rows(), dim = x.cols();
  double total = 0.0;
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t end = std::min(n, begin + kEvalChunk);
    ad::Graph g;
    ad::Var xv = g.constant(rows_of(x, begin, end));
    CodecOutput out = encode_eval(codec, g, xv);
    const double nll = source_nll(model, g, xv, out.xhat, false).item();
    total += -nll * static_cast<double>(dim) * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(n);
}

void save_checkpoint_dir(const fs::path& run_dir, const CodecModel& codec, const SourceModel* sm,
                         const nlohmann::json& extra) {
  const fs::path tmp = run_dir / "checkpoint.tmp";
  const fs::path dst = run_dir / "checkpoint";
  fs::remove_all(tmp);
  codec.save(tmp / "codec", extra);
  if (sm != nullptr) sm->save(tmp / "source_model", extra);
  fs::remove_all(dst);
  fs::rename(tmp, dst);
}

}  // namespace

void TrainConfig::validate() const {
  require(!lambdas.empty() && !alphas.empty() && !seeds.empty(),
          "lambda, alpha and seed lists must be non-empty");
  for (double l : lambdas) require(std::isfinite(l) && l > 0.0, "lambda must be > 0");
  for (double a : alphas) require(std::isfinite(a) && a >= 0.0, "alpha must be >= 0");
  require_distinct(lambdas, "lambda");
  require_distinct(alphas, "alpha");
  require_distinct(seeds, "seed");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(codec_lr > 0.0 && source_lr > 0.0, "learning rates must be > 0");
  require(eval_every >= 1, "eval_every must be >= 1");
  require(stage2_period >= 1, "stage2_period must be >= 1");
  require(dataset_size >= 20, "dataset_size must be >= 20");
  require(source.dim == architecture.dim, "source.dim must equal architecture.dim");
  require(source_model.hidden >= 1, "source_model.hidden must be >= 1");
  architecture.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda", c.lambdas},
          {"alpha", c.alphas},
          {"seed", c.seeds},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"codec_lr", c.codec_lr},
          {"source_lr", c.source_lr},
          {"eval_every", c.eval_every},
          {"dataset_size", c.dataset_size},
          {"stage2_period", c.stage2_period},
          {"source", to_json(c.source)},
          {"architecture", to_json(c.architecture)},
          {"source_model",
           {{"hidden", c.source_model.hidden}, {"context", to_string(c.source_model.context)}}}};
}

nlohmann::json default_train_config_json() { return to_json(TrainConfig{}); }

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  nlohmann::json full = default_train_config_json();
  merge_strict(full, doc, "");
  TrainConfig c;
  c.lambdas = scalar_or_list<double>(full["lambda"], "lambda");
  c.alphas = scalar_or_list<double>(full["alpha"], "alpha");
  c.seeds = scalar_or_list<std::uint64_t>(full["seed"], "seed");
  try {
    c.steps = full.at("steps").get<std::uint64_t>();
    c.batch_size = full.at("batch_size").get<std::size_t>();
    c.codec_lr = full.at("codec_lr").get<double>();
    c.source_lr = full.at("source_lr").get<double>();
    c.eval_every = full.at("eval_every").get<std::uint64_t>();
    c.dataset_size = full.at("dataset_size").get<std::size_t>();
    c.stage2_period = full.at("stage2_period").get<std::uint64_t>();
    c.source_model.hidden = full.at("source_model").at("hidden").get<std::size_t>();
    c.source_model.context =
        context_mode_from_string(full.at("source_model").at("context").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("malformed train config: ") + e.what());
  }
  c.source = source_config_from_json(full.at("source"));
  c.architecture = codec_architecture_from_json(full.at("architecture"));
  c.validate();
  return c;
}

nlohmann::json read_config_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kInvalidArgument, path.string() + ": " + e.what());
  }
}

TrainConfig load_train_config(const fs::path& path) {
  return train_config_from_json(read_config_file(path));
}

nlohmann::json resolve_config_json(const nlohmann::json& user,
                                   const std::vector<std::string>& overrides) {
  nlohmann::json full = default_train_config_json();
  if (!user.is_null()) merge_strict(full, user, "");
  for (const auto& o : overrides) apply_override(full, o);
  return full;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      fail(ErrorKind::kInvalidArgument, "unknown config key '" + key + "'");
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  *node = value.is_discarded() ? nlohmann::json(text) : std::move(value);
}

nlohmann::json run_config_json(const TrainConfig& config, double lambda, double alpha,
                               std::uint64_t seed) {
  nlohmann::json doc = to_json(config);
  doc["lambda"] = lambda;
  doc["alpha"] = alpha;
  doc["seed"] = seed;
  doc["format"] = kRunFormat;
  return doc;
}

std::string config_hash(const nlohmann::json& doc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(doc.dump()));
  return buf;
}

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::kCompleted: return "completed";
    case RunStatus::kDiverged: return "diverged";
    case RunStatus::kAborted: return "aborted";
    case RunStatus::kFailed: return "failed";
  }
  return "failed";
}

RunStatus run_status_from_string(const std::string& s) {
  if (s == "completed") return RunStatus::kCompleted;
  if (s == "diverged") return RunStatus::kDiverged;
  if (s == "aborted") return RunStatus::kAborted;
  if (s == "failed") return RunStatus::kFailed;
  fail(ErrorKind::kInvalidArgument, "unknown run status '" + s + "'");
}

const MetricRow& RunRecord::final_row() const {
  if (rows.empty()) fail(ErrorKind::kInvalidArgument, "run " + hash + " has no metric rows");
  return rows.back();
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(const RunRecord& r, const std::string& command_line) {
  std::ostringstream os;
  os << "# nicreg metrics\n"
     << "# command: " << command_line << "\n"
     << "# config_hash: " << r.hash << "\n"
     << "# seed: " << r.seed << "\n"
     << "step,lambda,alpha,seed,rate_bpd,mse,quality_db,reg_bits\n";
  for (const auto& m : r.rows) {
    os << m.step << ',' << format_number(r.lambda) << ',' << format_number(r.alpha) << ','
       << r.seed << ',' << format_number(m.rate_bpd) << ',' << format_number(m.mse) << ','
       << format_number(m.quality_db) << ',' << format_number(m.reg_bits) << '\n';
  }
  return os.str();
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<MetricRow> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header.empty()) {
      header = split(line);
      continue;
    }
    const auto cells = split(line);
    require(cells.size() == header.size(), "metrics row has the wrong number of columns");
    MetricRow m;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string& h = header[i];
      const double v = std::strtod(cells[i].c_str(), nullptr);
      if (h == "step") m.step = std::stoull(cells[i]);
      else if (h == "rate_bpd") m.rate_bpd = v;
      else if (h == "mse") m.mse = v;
      else if (h == "quality_db") m.quality_db = v;
      else if (h == "reg_bits") m.reg_bits = v;
    }
    if (!rows.empty()) require(m.step > rows.back().step, "metric steps must increase");
    rows.push_back(m);
  }
  require(!header.empty(), "metrics file has no header");
  return rows;
}

RunRecord load_run(const fs::path& run_dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(run_dir / "run.json"));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kIo, (run_dir / "run.json").string() + ": " + e.what());
  }
  RunRecord r;
  try {
    r.config = doc.at("config");
    r.hash = doc.at("hash").get<std::string>();
    r.lambda = r.config.at("lambda").get<double>();
    r.alpha = r.config.at("alpha").get<double>();
    r.seed = r.config.at("seed").get<std::uint64_t>();
    r.status = run_status_from_string(doc.at("status").get<std::string>());
    r.message = doc.value("message", "");
    r.wall_seconds = doc.value("wall_seconds", 0.0);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, "malformed run.json in " + run_dir.string() + ": " + e.what());
  }
  if (config_hash(r.config) != r.hash) {
    fail(ErrorKind::kIo, "config hash mismatch in " + run_dir.string());
  }
  r.rows = parse_metrics_csv(read_file(run_dir / "metrics.csv"));
  r.directory = run_dir;
  if (fs::exists(run_dir / "checkpoint")) r.checkpoint = run_dir / "checkpoint";
  return r;
}

namespace {

void persist(const RunRecord& r, const std::string& command_line) {
  if (r.directory.empty()) return;
  write_file_atomic(r.directory / "metrics.csv", metrics_csv(r, command_line));
  nlohmann::json doc = {{"hash", r.hash},
                        {"config", r.config},
                        {"status", to_string(r.status)},
                        {"message", r.message},
                        {"command", command_line},
                        {"rows", r.rows.size()},
                        {"wall_seconds", r.wall_seconds}};
  write_file_atomic(r.directory / "run.json", doc.dump(2) + "\n");
}

}  // namespace

RunRecord train_one(const TrainConfig& config, double lambda, double alpha, std::uint64_t seed,
                    const TrainOptions& options) {
  config.validate();
  require(std::isfinite(lambda) && lambda > 0.0, "lambda must be > 0");
  require(std::isfinite(alpha) && alpha >= 0.0, "alpha must be >= 0");
  const auto started = std::chrono::steady_clock::now();

  RunRecord rec;
  rec.config = run_config_json(config, lambda, alpha, seed);
  rec.hash = config_hash(rec.config);
  rec.lambda = lambda;
  rec.alpha = alpha;
  rec.seed = seed;
  if (!options.output_root.empty()) {
    rec.directory = options.output_root / "runs" / rec.hash;
    if (options.reuse_cache && fs::exists(rec.directory / "run.json")) {
      try {
        RunRecord cached = load_run(rec.directory);
        if (cached.ok() && cached.hash == rec.hash) {
          cached.cached = true;
          return cached;
        }
      } catch (const Error&) {
        // Unreadable cache entries are retrained.
      }
    }
    fs::create_directories(rec.directory);
  }

  const nlohmann::json ckpt_header = {{"config_hash", rec.hash}, {"seed", seed}};
  try {
#ifdef NICREG_ABLATE_REGULARIZER
    require(alpha == 0.0, "this build has the source regularizer compiled out; alpha must be 0");
#endif
    RunStreams streams(seed);
    auto source = make_source(config.source);
    require(source->dim() == config.architecture.dim, "source dimension does not match the codec");
    const ad::Tensor data = source->sample(streams.data, config.dataset_size).x;
    const ad::Tensor train_x = rows_of(data, 0, config.train_size());
    const ad::Tensor eval_x = rows_of(data, config.train_size(), config.dataset_size);

    CodecModel codec(config.architecture, streams.init);
    AunNoise noise(streams.noise);
    std::optional<SourceModel> sm;
#ifndef NICREG_ABLATE_REGULARIZER
    if (alpha > 0.0) {
      SourceModelArchitecture sa;
      sa.dim = config.architecture.dim;
      sa.hidden = config.source_model.hidden;
      sa.context = config.source_model.context;
      sa.data_scale = config.architecture.data_scale;
      sm.emplace(sa, streams.source_init);
    }
#endif

    auto record_eval = [&](std::uint64_t step) {
      EvalMetrics m = evaluate_codec(codec, eval_x);
      MetricRow row{step, m.rate_bpd, m.mse, m.quality_db,
                    std::numeric_limits<double>::quiet_NaN()};
      if (sm) row.reg_bits = eval_regularizer_bits(codec, *sm, eval_x);
      rec.rows.push_back(row);
      if (!rec.directory.empty()) {
        nlohmann::json h = ckpt_header;
        h["step"] = step;
        save_checkpoint_dir(rec.directory, codec, sm ? &*sm : nullptr, h);
        rec.checkpoint = rec.directory / "checkpoint";
      }
    };

    const ad::AdamOptions codec_opt{config.codec_lr};
    const ad::AdamOptions source_opt{config.source_lr};
    const std::size_t n_train = config.train_size();
    std::vector<std::size_t> idx(config.batch_size);

    record_eval(0);
    for (std::uint64_t step = 1; step <= config.steps; ++step) {
      if (options.cancel != nullptr && options.cancel->load()) {
        rec.status = RunStatus::kAborted;
        rec.message = "interrupted at step " + std::to_string(step);
        break;
      }
      for (auto& i : idx) {
        i = std::min(n_train - 1, static_cast<std::size_t>(uniform01(streams.data) *
                                                           static_cast<double>(n_train)));
      }
      const ad::Tensor batch = gather_rows(train_x, idx);

      ad::Graph g;
      ad::Var x = g.constant(batch);
      CodecOutput out = encode_train(codec, g, x, noise);
      RegularizedLoss loss = regularized_loss(out, x, sm ? &*sm : nullptr, lambda, alpha);
      if (!std::isfinite(loss.total.item())) {
        fail(ErrorKind::kTrainingDiverged, "loss is not finite at step " + std::to_string(step));
      }
      codec.params().zero_grad();
      g.backward(loss.total);
      ad::adam_step(codec.params(), codec_opt);

      if (sm && step % config.stage2_period == 0) {
        ad::Graph g2;
        ad::Var l2 = source_model_step_loss(*sm, g2, batch, out.xhat.value());
        sm->params().zero_grad();
        g2.backward(l2);
        ad::adam_step(sm->params(), source_opt);
      }

      if (step % config.eval_every == 0 || step == config.steps) record_eval(step);
    }
  } catch (const Error& e) {
    const bool diverged =
        e.kind() == ErrorKind::kTrainingDiverged || e.kind() == ErrorKind::kModelDiverged;
    rec.status = diverged ? RunStatus::kDiverged : RunStatus::kFailed;
    rec.message = e.what();
  } catch (const std::exception& e) {
    rec.status = RunStatus::kFailed;
    rec.message = e.what();
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  persist(rec, options.command_line);
  return rec;
}

std::vector<RunRecord> train_grid(const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  struct Cell {
    double lambda, alpha;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double l : config.lambdas)
    for (double a : config.alphas)
      for (std::uint64_t s : config.seeds) cells.push_back({l, a, s});

  std::vector<RunRecord> out(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      out[i] = train_one(config, cells[i].lambda, cells[i].alpha, cells[i].seed, options);
      if (options.on_run_done) {
        std::lock_guard lock(report);
        options.on_run_done(out[i]);
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, std::max<std::size_t>(1, cells.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  return out;
}

}  // namespace nicreg
