// dms: train a surrogate classifier, attack it, store the adversarial
// images under different integerization policies and measure what survives.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dms/attack.hpp"
#include "dms/attribution.hpp"
#include "dms/experiment.hpp"
#include "dms/image_io.hpp"
#include "dms/quantize.hpp"
#include "dms/random.hpp"
#include "dms/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

dms::ExperimentConfig resolve_config(const CommonOptions& opts) {
  std::ifstream file(opts.config);
  if (!file) throw std::runtime_error(opts.config + ": cannot open config");
  json doc;
  try {
    doc = json::parse(file);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(opts.config + ": " + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument(opts.config + ": expected a JSON object");
  if (opts.out) doc["output_dir"] = *opts.out;
  if (opts.seed) doc["seed"] = *opts.seed;
  if (opts.workers) doc["workers"] = *opts.workers;
  dms::ExperimentConfig config = dms::config_from_json(doc);
  config.validate();
  fs::create_directories(config.output_dir);
  return config;
}

void write_json(const fs::path& path, const ordered_json& j) {
  dms::write_file(path, j.dump(2) + "\n");
}

std::string attack_tag(const dms::AttackConfig& a, std::size_t position) {
  return std::to_string(position) + "_" + dms::to_string(a.method);
}

std::string pnm_extension(const dms::Shape3& s) { return s.channels == 3 ? ".ppm" : ".pgm"; }

int cmd_train(const CommonOptions& opts) {
  const auto config = resolve_config(opts);
  const auto bench = dms::prepare(config);
  ordered_json j;
  j["architecture"] = bench.model.architecture;
  j["parameters"] = bench.model.weights.size();
  j["train_accuracy"] = bench.train_accuracy;
  j["test_accuracy"] = bench.test_accuracy;
  j["model"] = (config.model.path ? *config.model.path : config.output_dir / "model.dmsw").generic_string();
  write_json(config.output_dir / "train.json", j);
  std::cout << "train accuracy " << bench.train_accuracy << ", held-out accuracy "
            << bench.test_accuracy << "\n";
  return 0;
}

// Writes clean PPMs, adversarial DMSF files and a manifest tying them together.
int cmd_attack(const CommonOptions& opts) {
  const auto config = resolve_config(opts);
  const auto bench = dms::prepare(config);
  const auto samples = dms::select_correct(bench.model, bench.test, config.sample_count);
  const fs::path root = config.output_dir / "attack";
  ordered_json manifest = ordered_json::array();
  for (std::size_t ai = 0; ai < config.attacks.size(); ++ai) {
    const auto& ac = config.attacks[ai];
    const fs::path dir = root / attack_tag(ac, ai);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      dms::AttackConfig per = ac;
      per.seed = dms::derive_seed(ac.seed, i);
      const dms::ImageF adv = dms::attack(bench.model, samples[i], per);
      const fs::path clean_path = dir / ("clean_" + std::to_string(i) + pnm_extension(adv.shape()));
      const fs::path adv_path = dir / ("adv_" + std::to_string(i) + ".dmsf");
      dms::write_ppm(samples[i].image, clean_path);
      dms::write_fimg(adv, adv_path);
      ordered_json e;
      e["attack"] = attack_tag(ac, ai);
      e["epsilon"] = ac.epsilon;
      e["index"] = i;
      e["label"] = samples[i].label;
      e["clean"] = fs::relative(clean_path, config.output_dir).generic_string();
      e["adversarial"] = fs::relative(adv_path, config.output_dir).generic_string();
      e["fooled"] = dms::predict(bench.model, adv).label != samples[i].label;
      manifest.push_back(e);
    }
  }
  write_json(root / "manifest.json", manifest);
  std::cout << "attacked " << samples.size() << " samples x " << config.attacks.size()
            << " attacks into " << root.string() << "\n";
  return 0;
}

ordered_json load_manifest(const dms::ExperimentConfig& config) {
  const fs::path path = config.output_dir / "attack" / "manifest.json";
  if (!fs::exists(path)) {
    throw std::runtime_error(path.string() + ": missing, run the attack subcommand first");
  }
  return ordered_json::parse(dms::read_file(path));
}

int cmd_quantize(const CommonOptions& opts) {
  const auto config = resolve_config(opts);
  const auto manifest = load_manifest(config);
  std::optional<dms::Workbench> bench;
  const fs::path root = config.output_dir / "quantize";
  ordered_json summary = ordered_json::array();
  for (const auto& e : manifest) {
    const dms::ImageF adv = dms::read_fimg(config.output_dir / e["adversarial"].get<std::string>());
    const dms::ImageU8 clean = dms::read_ppm(config.output_dir / e["clean"].get<std::string>());
    const auto label = e["label"].get<std::size_t>();
    ordered_json row;
    row["attack"] = e["attack"];
    row["index"] = e["index"];
    for (dms::StoreMethod method : config.methods) {
      if (method == dms::StoreMethod::Original) continue;
      dms::ImageU8 q;
      if (method == dms::StoreMethod::DmsAi || method == dms::StoreMethod::Dms) {
        if (!bench) bench = dms::prepare(config);
        if (method == dms::StoreMethod::DmsAi) {
          q = dms::dms_ai(bench->model, adv, label);
        } else {
          dms::DmsConfig dc = config.dms;
          if (config.dms_respect_budget) dc.budget = dms::PixelBudget{clean, e["epsilon"].get<double>()};
          q = dms::dms(bench->model, adv, label, dc).image;
        }
      } else {
        const auto qm = dms::parse_quant_method(dms::to_string(method));
        q = dms::quantize(adv, *qm);
      }
      const fs::path dir = root / e["attack"].get<std::string>() / dms::to_string(method);
      fs::create_directories(dir);
      dms::write_ppm(q, dir / (std::to_string(e["index"].get<std::size_t>()) + pnm_extension(q.shape())));
      row[dms::to_string(method)] = dms::precision_loss(adv, q);
    }
    summary.push_back(row);
  }
  write_json(root / "precision_loss.json", summary);
  std::cout << "quantized " << manifest.size() << " adversarial images into " << root.string()
            << "\n";
  return 0;
}

ordered_json attribute_one(const dms::ModelParams& model, const dms::ImageU8& image,
                           std::size_t label, std::size_t steps, const fs::path& stem) {
  const dms::ImageF x(image);
  const auto target = dms::AttributionTarget::loss(label);
  const double at_x = dms::target_value(model, x, target);
  ordered_json j;
  for (int dir : {+1, -1}) {
    dms::ImageF base = x;
    for (float& v : base.values()) v = std::clamp(v + float(dir), 0.0f, 255.0f);
    const auto map = dms::integrated_gradients(model, x, base, target, steps);
    std::vector<float> scores(map.scores.begin(), map.scores.end());
    const std::string suffix = dir > 0 ? "_plus.dmsf" : "_minus.dmsf";
    dms::write_fimg(dms::ImageF(map.shape, std::move(scores)), stem.string() + suffix);
    ordered_json e;
    e["attribution_sum"] = map.total();
    e["target_difference"] = at_x - dms::target_value(model, base, target);
    j[dir > 0 ? "plus" : "minus"] = e;
  }
  return j;
}

int cmd_attribute(const CommonOptions& opts, const std::optional<std::string>& image,
                  std::optional<std::size_t> label) {
  const auto config = resolve_config(opts);
  const auto bench = dms::prepare(config);
  const fs::path root = config.output_dir / "attribute";
  fs::create_directories(root);
  ordered_json summary = ordered_json::array();
  if (image) {
    if (!label) throw std::invalid_argument("--image needs --label");
    const dms::ImageU8 img = dms::read_ppm(*image);
    auto j = attribute_one(bench.model, img, *label, config.dms.riemann_steps,
                           root / fs::path(*image).stem());
    j["image"] = *image;
    summary.push_back(j);
  } else {
    for (const auto& e : load_manifest(config)) {
      const dms::ImageF adv = dms::read_fimg(config.output_dir / e["adversarial"].get<std::string>());
      const auto lbl = e["label"].get<std::size_t>();
      const dms::ImageU8 integer = dms::dms_ai(bench.model, adv, lbl);
      const fs::path dir = root / e["attack"].get<std::string>();
      fs::create_directories(dir);
      auto j = attribute_one(bench.model, integer, lbl, config.dms.riemann_steps,
                             dir / std::to_string(e["index"].get<std::size_t>()));
      j["attack"] = e["attack"];
      j["index"] = e["index"];
      summary.push_back(j);
    }
  }
  write_json(root / "summary.json", summary);
  std::cout << "wrote " << summary.size() << " attribution pairs to " << root.string() << "\n";
  return 0;
}

void write_reports(const dms::EvalReport& report, const fs::path& dir) {
  dms::emit_report(report, dms::ReportFormat::Json, dir / "report.json");
  dms::emit_report(report, dms::ReportFormat::Csv, dir / "report.csv");
  dms::emit_report(report, dms::ReportFormat::Markdown, dir / "report.md");
}

int cmd_evaluate(const CommonOptions& opts) {
  const auto config = resolve_config(opts);
  const auto report = dms::run_experiment(config);
  write_reports(report, config.output_dir);
  std::cout << dms::report_to_markdown(report);
  std::cerr << "evaluated " << report.evaluated << " samples in " << report.wall_seconds
            << " s\n";
  return 0;
}

int cmd_sweep(const CommonOptions& opts, const std::optional<std::string>& axis_name,
              const std::vector<double>& values) {
  auto config = resolve_config(opts);
  dms::SweepSpec spec = config.sweep.value_or(dms::SweepSpec{});
  if (axis_name) {
    const auto axis = dms::parse_sweep_axis(*axis_name);
    if (!axis) throw std::invalid_argument("unknown sweep axis '" + *axis_name + "'");
    spec.axis = *axis;
  }
  if (!values.empty()) spec.values = values;
  if (spec.values.empty()) {
    throw std::invalid_argument("sweep needs values (config 'sweep.values' or --values)");
  }
  const auto reports = dms::sweep(config, spec.axis, spec.values);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    std::ostringstream name;
    name << dms::to_string(spec.axis) << "_" << spec.values[i];
    write_reports(reports[i], config.output_dir / "sweep" / name.str());
  }
  const std::string csv = dms::sweep_to_csv(spec.axis, spec.values, reports);
  dms::write_file(config.output_dir / "sweep.csv", csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Store adversarial images without losing their effect"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON experiment config")->required();
    sub->add_option("--out", opts.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", opts.seed, "master seed (overrides seed)");
    sub->add_option("--workers", opts.workers, "parallel workers (overrides workers)");
  };

  auto* train = app.add_subcommand("train", "train (or load) the surrogate model");
  auto* attack = app.add_subcommand("attack", "generate float adversarial images");
  auto* quantize = app.add_subcommand("quantize", "integerize stored adversarial images");
  auto* attribute = app.add_subcommand("attribute", "integrated-gradients maps");
  auto* evaluate = app.add_subcommand("evaluate", "full attack/store/reload evaluation");
  auto* sweep = app.add_subcommand("sweep", "evaluate over a parameter axis");
  for (auto* sub : {train, attack, quantize, attribute, evaluate, sweep}) add_common(sub);

  std::optional<std::string> image;
  std::optional<std::size_t> label;
  attribute->add_option("--image", image, "PPM/PGM image to attribute instead of the manifest");
  attribute->add_option("--label", label, "original label of --image");

  std::optional<std::string> axis;
  std::vector<double> values;
  sweep->add_option("--axis", axis, "alpha, epsilon or steps");
  sweep->add_option("--values", values, "values along the axis");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(opts);
    if (*attack) return cmd_attack(opts);
    if (*quantize) return cmd_quantize(opts);
    if (*attribute) return cmd_attribute(opts, image, label);
    if (*evaluate) return cmd_evaluate(opts);
    if (*sweep) return cmd_sweep(opts, axis, values);
  } catch (const std::exception& e) {
    std::cerr << "dms: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
