#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "learn/serialize.hpp"

namespace learn {
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_stage_files(const fs::path& dir, const RunConfig& config,
                       const std::vector<std::pair<std::string, std::string>>& inputs) {
  write_text(dir / "config.ini", emit_config(config));
  std::ostringstream out;
  out << "config " << hex64(config_hash(config)) << '\n';
  for (const auto& [k, v] : inputs) out << k << ' ' << v << '\n';
  write_text(dir / "inputs.txt", out.str());
}

DatasetManifest expected_manifest(const RunConfig& c) {
  return generate_synthetic_dataset(c.classes, c.per_class, c.image_size, c.seed);
}

FrozenSuite expected_suite(const RunConfig& c, const DatasetManifest& m) {
  return freeze_test_sets(m, c.types, kOccludedLevels, c.seed);
}

// Reads the generated dataset, verifying checksums and that it matches the
// current config.
DatasetManifest load_manifest(const RunConfig& config, const RunLayout& layout) {
  const auto path = layout.data / "manifest.txt";
  if (!fs::exists(path))
    throw std::runtime_error("no dataset at " + layout.data.string() + " (run generate-data first)");
  std::ifstream in(path);
  auto manifest = read_manifest(in);
  if (!(manifest == expected_manifest(config)))
    throw std::runtime_error("dataset at " + layout.data.string() +
                             " was generated from a different config (rerun generate-data)");
  return manifest;
}

FrozenSuite load_suite(const RunConfig& config, const RunLayout& layout,
                       const DatasetManifest& manifest) {
  std::ifstream in(layout.data / "frozen_suite.txt");
  if (!in) throw std::runtime_error("missing " + (layout.data / "frozen_suite.txt").string());
  auto suite = read_frozen_suite(in);
  if (!(suite == expected_suite(config, manifest)))
    throw std::runtime_error("frozen test sets in " + layout.data.string() +
                             " do not match the config (rerun generate-data)");
  return suite;
}

struct LoadedBackbone {
  BackboneModel model;
  FeatureNormalizer normalizer;
};

LoadedBackbone load_backbone(const RunLayout& layout) {
  const auto path = layout.backbone / "backbone.ckpt";
  if (!fs::exists(path))
    throw std::runtime_error("no backbone checkpoint at " + path.string() + " (run train-backbone first)");
  auto cp = load_checkpoint(path.string());
  auto model = backbone_from_checkpoint(cp);
  if (!model.frozen) throw InvariantViolation("backbone checkpoint " + path.string() + " is not frozen");
  if (std::stoull(cp.get("parameter_hash"), nullptr, 16) != model.frozen_hash)
    throw InvariantViolation("backbone checkpoint " + path.string() +
                             " does not match its recorded parameter hash");
  auto norm = normalizer_from_checkpoint(cp);
  if (!norm) throw std::runtime_error("backbone checkpoint " + path.string() + " has no normalizer");
  return {std::move(model), std::move(*norm)};
}

LearnAutoencoder load_learn(const fs::path& path, const Shape& feature_shape) {
  if (!fs::exists(path))
    throw std::runtime_error("no autoencoder checkpoint at " + path.string() + " (run train-learn first)");
  auto ae = learn_from_checkpoint(load_checkpoint(path.string()));
  if (ae.feature_shape != feature_shape)
    throw std::runtime_error("feature shape mismatch: backbone produces " + to_string(feature_shape) +
                             " but " + path.string() + " expects " + to_string(ae.feature_shape));
  return ae;
}

std::uint64_t params_hash(const LearnAutoencoder& ae) {
  auto p = const_cast<LearnAutoencoder&>(ae).parameters();
  return parameter_hash(p);
}

}  // namespace

void cmd_generate_data(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.root);
  auto manifest = expected_manifest(config);
  auto suite = expected_suite(config, manifest);

  std::ostringstream m, s;
  write_manifest(m, manifest);
  write_frozen_suite(s, suite);
  write_text(layout.data / "manifest.txt", m.str());
  write_text(layout.data / "frozen_suite.txt", s.str());
  write_stage_files(layout.data, config,
                    {{"manifest", hex64(manifest_hash(manifest))},
                     {"frozen_suite", hex64(hash_bytes(s.str().data(), s.str().size()))}});
  log << "generate-data: " << manifest.count(Split::train) << " train, " << manifest.count(Split::val)
      << " val, " << manifest.count(Split::test) << " test images; " << suite.cells.size()
      << " occluded test sets plus the clean set in " << layout.data.string() << '\n';
}

void cmd_train_backbone(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.root);
  Dataset data(load_manifest(config, layout));
  auto model = build_backbone(config.classes, config.image_size, config.seed);
  auto result = finetune(model, data, config.finetune_config());
  freeze(model);
  auto norm = fit_normalizer(model.extractor, data.images(Split::train));
  const double test_acc = accuracy(model, data.images(Split::test));

  fs::create_directories(layout.backbone);
  save_checkpoint((layout.backbone / "backbone.ckpt").string(), backbone_checkpoint(model, &norm));
  std::ostringstream metrics;
  metrics << "epoch\ttrain_loss\ttrain_accuracy\tval_accuracy\n" << std::setprecision(6) << std::fixed;
  for (const auto& e : result.history)
    metrics << e.epoch << '\t' << e.train_loss << '\t' << e.train_accuracy << '\t' << e.val_accuracy << '\n';
  metrics << "# best_epoch " << result.best_epoch << "\n# test_accuracy " << test_acc << '\n';
  write_text(layout.backbone / "metrics.tsv", metrics.str());
  write_stage_files(layout.backbone, config,
                    {{"manifest", hex64(manifest_hash(data.manifest()))},
                     {"backbone", hex64(model.frozen_hash)}});
  log << "train-backbone: best epoch " << result.best_epoch << ", clean test accuracy "
      << std::fixed << std::setprecision(4) << test_acc << '\n';
}

void cmd_train_learn(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.root);
  Dataset data(load_manifest(config, layout));
  auto [model, norm] = load_backbone(layout);
  auto ae = build_learn(model.extractor.feature_shape, config.seed);
  for (const auto& w : ae.warnings) log << "train-learn: warning: " << w << '\n';

  const auto history = train_learn(ae, model, norm, data, config.train_config());
  if (history.backbone_hash_before != history.backbone_hash_after ||
      history.backbone_hash_after != model.frozen_hash)
    throw InvariantViolation("backbone parameters changed during LEARN training");

  fs::create_directories(layout.learn);
  save_checkpoint((layout.learn / "learn.ckpt").string(), learn_checkpoint(ae, config.weights));
  write_text(layout.learn / "history.tsv", history_tsv(history));
  std::ostringstream audit;
  audit << "backbone_before " << hex64(history.backbone_hash_before) << "\nbackbone_after "
        << hex64(history.backbone_hash_after) << "\nclean_passes " << history.clean_count << '\n';
  for (auto t : kOccluderTypes)
    audit << "occluded_" << occluder_name(t) << ' ' << history.type_counts[static_cast<std::size_t>(t)] << '\n';
  audit << "best_epoch " << history.best_epoch << "\nstopped_early " << history.stopped_early << '\n';
  write_text(layout.learn / "audit.txt", audit.str());
  write_stage_files(layout.learn, config,
                    {{"manifest", hex64(manifest_hash(data.manifest()))},
                     {"backbone", hex64(model.frozen_hash)},
                     {"learn", hex64(params_hash(ae))}});
  log << "train-learn: " << history.epochs.size() << " epochs, best epoch " << history.best_epoch
      << " (validation " << std::fixed << std::setprecision(4) << history.best_metric << ")\n";
}

std::vector<ResultsTable> cmd_evaluate(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.root);
  const auto manifest = load_manifest(config, layout);
  const auto suite = load_suite(config, layout, manifest);
  Dataset data(manifest);
  auto [model, norm] = load_backbone(layout);
  const auto ae = load_learn(layout.learn / "learn.ckpt", model.extractor.feature_shape);
  std::optional<LearnAutoencoder> ablation;
  if (!config.ablation.empty()) ablation = load_learn(config.ablation, model.extractor.feature_shape);

  const auto sets = prepare_evaluation(model.extractor, suite, data);
  std::vector<std::pair<std::string, Pipeline>> rows{{"baseline", {&model, &norm, nullptr}},
                                                     {"proposed", {&model, &norm, &ae}}};
  if (ablation) rows.push_back({"ablation", {&model, &norm, &*ablation}});

  std::vector<ResultsTable> tables{evaluate_pipeline(rows, sets, "results")};
  if (config.heldout) {
    auto seen_types = config.train_config().policy.types;
    std::vector<OccluderType> held{*config.heldout};
    tables.push_back(evaluate_pipeline(rows, select_sets(sets, seen_types), "seen"));
    tables.push_back(evaluate_pipeline(rows, select_sets(sets, held), "heldout"));
  }
  for (auto& t : tables) {
    t.seeds = {config.seed};
    t.manifest_hash = hex64(manifest_hash(manifest));
    t.config_hash = hex64(config_hash(config));
  }

  Provenance prov;
  prov.add("backbone", hex64(model.frozen_hash));
  prov.add("learn", hex64(params_hash(ae)));
  if (ablation) prov.add("ablation", hex64(params_hash(*ablation)));
  emit_report(tables, nullptr, prov, layout.eval);
  write_stage_files(layout.eval, config,
                    {{"manifest", hex64(manifest_hash(manifest))},
                     {"backbone", hex64(model.frozen_hash)},
                     {"learn", hex64(params_hash(ae))}});
  log << table_text(tables.front());

  const auto& r = tables.front();
  const double drift = r.at("proposed", "L0") - r.at("baseline", "L0");
  if (std::abs(drift) > config.clean_tolerance) {
    std::ostringstream msg;
    msg << "clean accuracy moved by " << std::fixed << std::setprecision(2) << 100 * drift
        << " points (tolerance " << 100 * config.clean_tolerance << ")";
    throw InvariantViolation(msg.str());
  }
  return tables;
}

void cmd_report(const RunConfig& config, std::ostream& out) {
  const RunLayout layout(config.root);
  std::ostringstream report;
  report << "# run " << config.root << "\n\n## config\n\n" << emit_config(config);
  for (const char* stage : {"data", "backbone", "learn", "eval"}) {
    const auto p = fs::path(config.root) / stage / "inputs.txt";
    if (fs::exists(p)) report << "\n## " << stage << " inputs\n\n" << read_text(p);
  }
  if (fs::exists(layout.backbone / "metrics.tsv"))
    report << "\n## backbone metrics\n\n" << read_text(layout.backbone / "metrics.tsv");
  if (fs::exists(layout.learn / "history.tsv"))
    report << "\n## training history\n\n" << read_text(layout.learn / "history.tsv");
  if (fs::exists(layout.learn / "audit.txt"))
    report << "\n## training audit\n\n" << read_text(layout.learn / "audit.txt");
  bool any = false;
  for (const char* title : {"results", "seen", "heldout"}) {
    const auto p = layout.eval / (std::string(title) + ".txt");
    if (!fs::exists(p)) continue;
    report << "\n## " << title << "\n\n" << read_text(p);
    any = true;
  }
  if (!any) throw std::runtime_error("no results in " + layout.eval.string() + " (run evaluate first)");
  write_text(fs::path(config.root) / "report.md", report.str());
  out << report.str();
}

}  // namespace learn
