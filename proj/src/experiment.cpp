#include "dms/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dms/dataset.hpp"
#include "dms/image_io.hpp"
#include "dms/quantize.hpp"
#include "dms/random.hpp"

namespace dms {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Names

std::string to_string(StoreMethod method) {
  switch (method) {
    case StoreMethod::Original: return "Original";
    case StoreMethod::Upper: return "Upper";
    case StoreMethod::Truncate: return "Truncate";
    case StoreMethod::Round: return "Round";
    case StoreMethod::DmsAi: return "DmsAi";
    case StoreMethod::Dms: return "Dms";
  }
  return "?";
}

const std::vector<StoreMethod>& all_store_methods() {
  static const std::vector<StoreMethod> all{StoreMethod::Original, StoreMethod::Upper,
                                            StoreMethod::Truncate, StoreMethod::Round,
                                            StoreMethod::DmsAi,    StoreMethod::Dms};
  return all;
}

std::optional<StoreMethod> parse_store_method(std::string_view name) {
  for (auto m : all_store_methods()) {
    if (name == to_string(m)) return m;
  }
  return std::nullopt;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Alpha: return "alpha";
    case SweepAxis::Epsilon: return "epsilon";
    case SweepAxis::Steps: return "steps";
  }
  return "?";
}

std::optional<SweepAxis> parse_sweep_axis(std::string_view name) {
  if (name == "alpha") return SweepAxis::Alpha;
  if (name == "epsilon") return SweepAxis::Epsilon;
  if (name == "steps") return SweepAxis::Steps;
  return std::nullopt;
}

const MethodStats& AttackResult::stats(StoreMethod method) const {
  for (const auto& m : methods) {
    if (m.method == method) return m;
  }
  throw std::out_of_range("no results for method " + to_string(method));
}

// ---------------------------------------------------------------------------
// Config

namespace {

void reject_unknown(const json& obj, std::initializer_list<std::string_view> keys,
                    const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& item : obj.items()) {
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
      throw std::invalid_argument(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(where + "." + key + ": wrong type");
  }
}

AttackConfig parse_attack(const json& j, std::uint64_t seed, const std::string& where) {
  reject_unknown(j, {"method", "epsilon", "steps", "alpha", "decay", "kernel_size",
                     "kernel_sigma", "scale_copies", "seed", "random_start"},
                 where);
  AttackConfig a;
  a.seed = seed;
  std::string method = to_string(a.method);
  read(j, "method", method, where);
  const auto parsed = parse_attack_method(method);
  if (!parsed) throw std::invalid_argument(where + ".method: unknown attack '" + method + "'");
  a.method = *parsed;
  // MI and SINI default to unit momentum, TI to none.
  a.decay = a.method == AttackMethod::TIFGSM ? 0.0 : 1.0;
  read(j, "epsilon", a.epsilon, where);
  read(j, "steps", a.steps, where);
  if (j.contains("alpha") && !j.at("alpha").is_null()) {
    double alpha = 0.0;
    read(j, "alpha", alpha, where);
    a.alpha = alpha;
  }
  read(j, "decay", a.decay, where);
  read(j, "kernel_size", a.kernel_size, where);
  read(j, "kernel_sigma", a.kernel_sigma, where);
  read(j, "scale_copies", a.scale_copies, where);
  read(j, "seed", a.seed, where);
  read(j, "random_start", a.random_start, where);
  return a;
}

ordered_json attack_to_json(const AttackConfig& a) {
  ordered_json j;
  j["method"] = to_string(a.method);
  j["epsilon"] = a.epsilon;
  j["steps"] = a.steps;
  j["alpha"] = a.step_size();
  j["decay"] = a.decay;
  j["kernel_size"] = a.kernel_size;
  j["kernel_sigma"] = a.kernel_sigma;
  j["scale_copies"] = a.scale_copies;
  j["seed"] = a.seed;
  j["random_start"] = a.random_start;
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (sample_count < 1) throw std::invalid_argument("sample_count must be >= 1");
  if (methods.empty()) throw std::invalid_argument("methods must not be empty");
  if (attacks.empty()) throw std::invalid_argument("attacks must not be empty");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  for (const auto& a : attacks) a.validate();
  dms.validate();
  if (!model.path || !fs::exists(*model.path)) {
    architecture_layers(model.architecture, dataset.input);
    if (!(model.training.learning_rate > 0.0f)) {
      throw std::invalid_argument("model.learning_rate must be > 0");
    }
  }
  if (dataset.kind == DatasetSpec::Kind::Synthetic) {
    if (dataset.train_count < 1 || dataset.test_count < 1) {
      throw std::invalid_argument("dataset: train_count and test_count must be >= 1");
    }
  } else {
    if (!fs::is_directory(dataset.test_dir)) {
      throw std::invalid_argument("dataset.test_dir: not a directory: " + dataset.test_dir.string());
    }
    if (!dataset.train_dir.empty() && !fs::is_directory(dataset.train_dir)) {
      throw std::invalid_argument("dataset.train_dir: not a directory: " + dataset.train_dir.string());
    }
  }
  if (sweep && sweep->values.empty()) throw std::invalid_argument("sweep.values must not be empty");
}

ExperimentConfig config_from_json(const json& doc) {
  reject_unknown(doc, {"seed", "output_dir", "workers", "sample_count", "methods", "model",
                       "dataset", "attack", "attacks", "dms", "sweep"},
                 "config");
  ExperimentConfig c;
  read(doc, "seed", c.seed, "config");
  std::string out = c.output_dir.string();
  read(doc, "output_dir", out, "config");
  c.output_dir = out;
  read(doc, "workers", c.workers, "config");
  read(doc, "sample_count", c.sample_count, "config");

  if (doc.contains("methods")) {
    std::vector<std::string> names;
    read(doc, "methods", names, "config");
    c.methods.clear();
    for (const auto& n : names) {
      const auto m = parse_store_method(n);
      if (!m) throw std::invalid_argument("config.methods: unknown method '" + n + "'");
      c.methods.push_back(*m);
    }
  }

  c.dataset.seed = c.seed;
  if (doc.contains("dataset")) {
    const json& d = doc.at("dataset");
    reject_unknown(d, {"kind", "height", "width", "channels", "classes", "train_count",
                       "test_count", "seed", "train_dir", "test_dir"},
                   "dataset");
    std::string kind = "synthetic";
    read(d, "kind", kind, "dataset");
    if (kind == "synthetic") {
      c.dataset.kind = DatasetSpec::Kind::Synthetic;
    } else if (kind == "directory") {
      c.dataset.kind = DatasetSpec::Kind::Directory;
    } else {
      throw std::invalid_argument("dataset.kind: expected 'synthetic' or 'directory'");
    }
    read(d, "height", c.dataset.input.height, "dataset");
    read(d, "width", c.dataset.input.width, "dataset");
    read(d, "channels", c.dataset.input.channels, "dataset");
    read(d, "classes", c.dataset.input.classes, "dataset");
    read(d, "train_count", c.dataset.train_count, "dataset");
    read(d, "test_count", c.dataset.test_count, "dataset");
    read(d, "seed", c.dataset.seed, "dataset");
    std::string train_dir, test_dir;
    read(d, "train_dir", train_dir, "dataset");
    read(d, "test_dir", test_dir, "dataset");
    c.dataset.train_dir = train_dir;
    c.dataset.test_dir = test_dir;
  }

  c.model.init_seed = c.seed;
  c.model.training.seed = c.seed;
  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown(m, {"path", "architecture", "init_seed", "epochs", "learning_rate",
                       "train_seed"},
                   "model");
    if (m.contains("path")) {
      std::string path;
      read(m, "path", path, "model");
      c.model.path = path;
    }
    read(m, "architecture", c.model.architecture, "model");
    read(m, "init_seed", c.model.init_seed, "model");
    read(m, "epochs", c.model.training.epochs, "model");
    read(m, "learning_rate", c.model.training.learning_rate, "model");
    read(m, "train_seed", c.model.training.seed, "model");
  }

  if (doc.contains("attack") && doc.contains("attacks")) {
    throw std::invalid_argument("config: give either 'attack' or 'attacks', not both");
  }
  if (doc.contains("attack")) {
    c.attacks = {parse_attack(doc.at("attack"), c.seed, "attack")};
  } else if (doc.contains("attacks")) {
    if (!doc.at("attacks").is_array()) throw std::invalid_argument("attacks: expected an array");
    c.attacks.clear();
    for (std::size_t i = 0; i < doc.at("attacks").size(); ++i) {
      c.attacks.push_back(
          parse_attack(doc.at("attacks")[i], c.seed, "attacks[" + std::to_string(i) + "]"));
    }
  } else {
    c.attacks.front().seed = c.seed;
  }

  if (doc.contains("dms")) {
    const json& d = doc.at("dms");
    reject_unknown(d, {"k_ratio", "riemann_steps", "as_trigger", "respect_budget"}, "dms");
    read(d, "k_ratio", c.dms.k_ratio, "dms");
    read(d, "riemann_steps", c.dms.riemann_steps, "dms");
    std::string trigger = to_string(c.dms.as_trigger);
    read(d, "as_trigger", trigger, "dms");
    const auto t = parse_as_trigger(trigger);
    if (!t) throw std::invalid_argument("dms.as_trigger: expected 'on_failure' or 'always'");
    c.dms.as_trigger = *t;
    read(d, "respect_budget", c.dms_respect_budget, "dms");
  }

  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    reject_unknown(s, {"axis", "values"}, "sweep");
    SweepSpec spec;
    std::string axis = "epsilon";
    read(s, "axis", axis, "sweep");
    const auto parsed = parse_sweep_axis(axis);
    if (!parsed) throw std::invalid_argument("sweep.axis: unknown axis '" + axis + "'");
    spec.axis = *parsed;
    read(s, "values", spec.values, "sweep");
    c.sweep = spec;
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream file(path);
  if (!file) throw std::runtime_error(path.string() + ": cannot open config");
  json doc;
  try {
    doc = json::parse(file);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["sample_count"] = c.sample_count;
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.push_back(to_string(m));
  j["methods"] = methods;

  ordered_json model;
  if (c.model.path) model["path"] = c.model.path->generic_string();
  model["architecture"] = c.model.architecture;
  model["init_seed"] = c.model.init_seed;
  model["epochs"] = c.model.training.epochs;
  model["learning_rate"] = c.model.training.learning_rate;
  model["train_seed"] = c.model.training.seed;
  j["model"] = model;

  ordered_json data;
  if (c.dataset.kind == DatasetSpec::Kind::Synthetic) {
    data["kind"] = "synthetic";
    data["height"] = c.dataset.input.height;
    data["width"] = c.dataset.input.width;
    data["channels"] = c.dataset.input.channels;
    data["classes"] = c.dataset.input.classes;
    data["train_count"] = c.dataset.train_count;
    data["test_count"] = c.dataset.test_count;
    data["seed"] = c.dataset.seed;
  } else {
    data["kind"] = "directory";
    data["train_dir"] = c.dataset.train_dir.generic_string();
    data["test_dir"] = c.dataset.test_dir.generic_string();
  }
  j["dataset"] = data;

  ordered_json attacks = ordered_json::array();
  for (const auto& a : c.attacks) attacks.push_back(attack_to_json(a));
  j["attacks"] = attacks;

  ordered_json d;
  d["k_ratio"] = c.dms.k_ratio;
  d["riemann_steps"] = c.dms.riemann_steps;
  d["as_trigger"] = to_string(c.dms.as_trigger);
  d["respect_budget"] = c.dms_respect_budget;
  j["dms"] = d;
  return j;
}

// ---------------------------------------------------------------------------
// Pipeline

std::vector<LabeledSample> select_correct(const ModelParams& model,
                                          std::span<const LabeledSample> pool,
                                          std::size_t count, std::size_t* skipped) {
  std::vector<LabeledSample> out;
  std::size_t misses = 0;
  for (const auto& s : pool) {
    if (out.size() == count) break;
    if (predict(model, s.image).label == s.label) {
      out.push_back(s);
    } else {
      ++misses;
    }
  }
  if (skipped) *skipped = misses;
  return out;
}

Workbench prepare(const ExperimentConfig& config) {
  config.validate();
  Workbench bench;
  if (config.dataset.kind == DatasetSpec::Kind::Synthetic) {
    auto all = synth_dataset(config.dataset.train_count + config.dataset.test_count,
                             config.dataset.input, config.dataset.seed);
    bench.train.assign(all.begin(), all.begin() + long(config.dataset.train_count));
    bench.test.assign(all.begin() + long(config.dataset.train_count), all.end());
  } else {
    bench.test = load_image_directory(config.dataset.test_dir);
    if (!config.dataset.train_dir.empty()) bench.train = load_image_directory(config.dataset.train_dir);
  }

  if (config.model.path && fs::exists(*config.model.path)) {
    bench.model = load_weights(*config.model.path);
  } else {
    InputSpec spec = config.dataset.input;
    if (config.dataset.kind == DatasetSpec::Kind::Directory) {
      if (bench.train.empty()) {
        throw std::invalid_argument("dataset.train_dir is required when no trained model exists");
      }
      const Shape3 s = bench.train.front().image.shape();
      std::uint32_t classes = 0;
      for (const auto& x : bench.train) classes = std::max(classes, x.label + 1);
      spec = {std::uint32_t(s.height), std::uint32_t(s.width), std::uint32_t(s.channels),
              std::max(classes, spec.classes)};
    }
    ModelParams fresh = build_model(config.model.architecture, spec, config.model.init_seed);
    bench.model = train(std::move(fresh), bench.train, config.model.training).model;
    const fs::path target = config.model.path ? *config.model.path : config.output_dir / "model.dmsw";
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    save_weights(bench.model, target);
  }
  for (const auto& s : bench.test) {
    if (!(s.image.shape() == bench.model.input.shape()) || s.label >= bench.model.input.classes) {
      throw std::invalid_argument("dataset images do not match the model input spec");
    }
  }
  if (!bench.train.empty()) bench.train_accuracy = accuracy(bench.model, bench.train);
  bench.test_accuracy = accuracy(bench.model, bench.test);
  return bench;
}

namespace {

struct SampleOutcome {
  bool success = false;
  double precision_loss = 0.0;
  double linf = 0.0;
  bool violation = false;
  bool attribution_applied = false;
};

std::string method_extension(StoreMethod method, const Shape3& shape) {
  if (method == StoreMethod::Original) return ".dmsf";
  return shape.channels == 3 ? ".ppm" : ".pgm";
}

// One sample through attack, storage and reload for every method.
std::vector<SampleOutcome> evaluate_sample(const ExperimentConfig& config,
                                           const ModelParams& model, const LabeledSample& sample,
                                           const AttackConfig& attack_config,
                                           std::size_t index, const fs::path& dir) {
  AttackConfig ac = attack_config;
  ac.seed = derive_seed(attack_config.seed, index);
  const ImageF adv = attack(model, sample, ac);
  const ImageF clean(sample.image);
  const double bound = ac.epsilon + 1.0 / 255.0 + 1e-6;

  std::optional<ImageU8> integerized;
  std::vector<SampleOutcome> out;
  for (StoreMethod method : config.methods) {
    const fs::path file = dir / to_string(method) /
                          (std::to_string(index) + method_extension(method, adv.shape()));
    ImageF stored;
    SampleOutcome o;
    if (method == StoreMethod::Original) {
      write_fimg(adv, file);
      stored = read_fimg(file);
    } else {
      ImageU8 q;
      switch (method) {
        case StoreMethod::Upper: q = quantize(adv, QuantMethod::Upper); break;
        case StoreMethod::Truncate: q = quantize(adv, QuantMethod::Truncate); break;
        case StoreMethod::Round: q = quantize(adv, QuantMethod::Round); break;
        case StoreMethod::DmsAi:
          if (!integerized) integerized = dms_ai(model, adv, sample.label);
          q = *integerized;
          break;
        case StoreMethod::Dms: {
          DmsConfig dc = config.dms;
          if (config.dms_respect_budget) dc.budget = PixelBudget{sample.image, ac.epsilon};
          const DmsResult r = dms(model, adv, sample.label, dc);
          o.attribution_applied = r.attribution_applied;
          q = r.image;
          break;
        }
        case StoreMethod::Original: break;
      }
      write_ppm(q, file);
      const ImageU8 reloaded = read_ppm(file);
      o.precision_loss = precision_loss(adv, reloaded);
      stored = ImageF(reloaded);
    }
    o.success = predict(model, stored).label != sample.label;
    o.linf = linf_normalized(stored, clean);
    o.violation = o.linf > bound;
    out.push_back(o);
  }
  return out;
}

std::string attack_dir_name(const AttackConfig& a, std::size_t position) {
  return std::to_string(position) + "_" + to_string(a.method);
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& config, const Workbench& bench) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  EvalReport report;
  report.config = config_to_json(config);
  report.train_accuracy = bench.train_accuracy;
  report.test_accuracy = bench.test_accuracy;

  const std::vector<LabeledSample> samples =
      select_correct(bench.model, bench.test, config.sample_count, &report.skipped_misclassified);
  report.evaluated = samples.size();
  if (samples.empty()) throw std::runtime_error("no correctly classified samples to attack");

  for (std::size_t ai = 0; ai < config.attacks.size(); ++ai) {
    const AttackConfig& ac = config.attacks[ai];
    const fs::path dir = config.output_dir / "samples" / attack_dir_name(ac, ai);
    for (StoreMethod m : config.methods) fs::create_directories(dir / to_string(m));

    std::vector<std::vector<SampleOutcome>> outcomes(samples.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      for (std::size_t i = next++; i < samples.size(); i = next++) {
        try {
          outcomes[i] = evaluate_sample(config, bench.model, samples[i], ac, i, dir);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = samples.size();
        }
      }
    };
    const std::size_t n_threads = std::min(config.workers, samples.size());
    if (n_threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    AttackResult result;
    result.attack = ac;
    for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
      MethodStats s;
      s.method = config.methods[mi];
      double loss_sum = 0.0;
      for (const auto& per_sample : outcomes) {
        const SampleOutcome& o = per_sample[mi];
        s.successes += o.success;
        loss_sum += o.precision_loss;
        s.epsilon_violations += o.violation;
        s.max_linf = std::max(s.max_linf, o.linf);
        s.attribution_applied += o.attribution_applied;
      }
      s.total = outcomes.size();
      s.asr = double(s.successes) / double(s.total);
      s.precision_loss = loss_sum / double(s.total);
      result.methods.push_back(s);
    }
    report.attacks.push_back(std::move(result));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

EvalReport run_experiment(const ExperimentConfig& config) {
  const Workbench bench = prepare(config);
  return run_experiment(config, bench);
}

std::vector<EvalReport> sweep(const ExperimentConfig& config, const Workbench& bench,
                              SweepAxis axis, std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("sweep: no values given");
  std::vector<EvalReport> reports;
  for (double v : values) {
    ExperimentConfig c = config;
    for (auto& a : c.attacks) {
      switch (axis) {
        case SweepAxis::Alpha: a.alpha = v; break;
        case SweepAxis::Epsilon: a.epsilon = v; break;
        case SweepAxis::Steps:
          if (!(v >= 1.0) || v != std::floor(v)) {
            throw std::invalid_argument("sweep: steps values must be positive integers");
          }
          a.steps = std::size_t(v);
          break;
      }
    }
    std::ostringstream name;
    name << to_string(axis) << "_" << v;
    c.output_dir = config.output_dir / "sweep" / name.str();
    reports.push_back(run_experiment(c, bench));
  }
  return reports;
}

std::vector<EvalReport> sweep(const ExperimentConfig& config, SweepAxis axis,
                              std::span<const double> values) {
  const Workbench bench = prepare(config);
  return sweep(config, bench, axis, values);
}

}  // namespace dms
