#include "learn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "learn/ops.hpp"
#include "learn/optim.hpp"

namespace learn {

std::string hex64(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << value;
  return out.str();
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and non-negative");
  }
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (policy.types.empty()) throw std::invalid_argument("no occluder types to train on");
  if (val_occluded_copies < 1) throw std::invalid_argument("val_occluded_copies must be at least 1");
  weights.validate();
}

std::string TrainConfig::canonical() const {
  std::ostringstream out;
  out.precision(17);
  out << "learning_rate=" << learning_rate << "\nbatch_size=" << batch_size
      << "\nmax_epochs=" << max_epochs << "\npatience=" << patience << "\nseed=" << seed
      << "\nval_occluded_copies=" << val_occluded_copies
      << "\nlambda_intra=" << weights.lambda_intra
      << "\nlambda_inter=" << weights.lambda_inter
      << "\nlambda_cls=" << weights.lambda_cls << "\nmargin=" << weights.margin
      << "\ntypes=";
  for (auto t : policy.types) out << occluder_code(t);
  out << "\nmin_coverage=" << policy.min_coverage
      << "\nmax_coverage=" << policy.max_coverage
      << "\nclean_fraction=" << policy.clean_fraction << '\n';
  return out.str();
}

// -- Features ----------------------------------------------------------------

FeatureSet extract_feature_set(const FeatureExtractor& extractor,
                               std::span<const LabeledImage> images, std::string name) {
  FeatureSet set;
  set.name = std::move(name);
  for (const auto& img : images) {
    set.features.push_back(extractor(img.pixels.detach()).detach());
    set.labels.push_back(img.label);
    set.ids.push_back(img.sample_id);
  }
  return set;
}

FeatureSet extract_feature_set(const FeatureExtractor& extractor, const FrozenSet& frozen,
                               const Dataset& dataset) {
  FeatureSet set;
  set.name = frozen.name;
  for (const auto& occ : materialize(frozen, dataset)) {
    set.features.push_back(extractor(occ.pixels).detach());
    set.labels.push_back(dataset.by_id(occ.source).label);
    set.ids.push_back(occ.source);
  }
  return set;
}

Tensor Pipeline::head_input(const Tensor& raw) const {
  if (!ae) return raw;
  return normalizer->denormalize((*ae)(normalizer->normalize(raw)));
}

Tensor Pipeline::logits(const Tensor& raw) const {
  return backbone->head(head_input(raw));
}

double Pipeline::accuracy(const FeatureSet& set) const {
  if (set.features.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.features.size(); ++i) {
    correct += predict(logits(set.features[i])) == set.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.features.size());
}

// -- Training ----------------------------------------------------------------

TrainingHistory train_learn(LearnAutoencoder& ae, const BackboneModel& backbone,
                            const FeatureNormalizer& normalizer, const Dataset& data,
                            const TrainConfig& config) {
  config.validate();
  if (!is_frozen(backbone)) {
    throw std::logic_error("train_learn: backbone parameters are not frozen");
  }
  TrainingHistory history;
  history.backbone_hash_before = parameter_hash(backbone);

  const auto& train = data.images(Split::train);
  std::unordered_map<std::uint64_t, Tensor> clean_features;
  for (const auto& img : train) {
    clean_features.emplace(img.sample_id,
                           normalizer.normalize(backbone.extractor(img.pixels.detach())));
  }
  const FeatureSet val_clean =
      extract_feature_set(backbone.extractor, data.images(Split::val), "val-clean");
  FeatureSet val_occluded;
  for (std::size_t copy = 0; copy < config.val_occluded_copies; ++copy) {
    const auto part = extract_feature_set(
        backbone.extractor,
        freeze_mixed_set(data.manifest(), Split::val, config.policy.types,
                         derive_seed(derive_seed(config.seed, 3), copy)),
        data);
    val_occluded.features.insert(val_occluded.features.end(), part.features.begin(),
                                 part.features.end());
    val_occluded.labels.insert(val_occluded.labels.end(), part.labels.begin(),
                               part.labels.end());
  }

  const auto params = ae.parameters();
  Adam opt(params, config.learning_rate);
  BatchStream stream(train, config.batch_size, config.policy, derive_seed(config.seed, 1));
  const Pipeline proposed{&backbone, &normalizer, &ae};

  std::vector<Vector> best;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t batch_id = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    stream.start_epoch(epoch);
    Rng pair_rng(derive_seed(derive_seed(config.seed, 2), epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    while (auto batch = stream.next()) {
      std::vector<FeaturePair> pairs;
      pairs.reserve(batch->size());
      for (const auto& p : *batch) {
        const Tensor& clean = clean_features.at(p.clean.sample_id);
        pairs.push_back({clean,
                         p.clean_pass ? clean
                                      : normalizer.normalize(backbone.extractor(p.occluded.pixels)),
                         p.clean.label});
      }
      auto loss = loss_total(pairs, ae, backbone.head, normalizer, config.weights, pair_rng);
      if (!std::isfinite(loss.total.item())) {
        std::ostringstream msg;
        msg << "train_learn: non-finite loss at epoch " << epoch << ", batch " << batch_id
            << " (rec " << loss.rec << ", intra " << loss.intra << ", inter " << loss.inter
            << ", cls " << loss.cls << ")";
        throw std::runtime_error(msg.str());
      }
      opt.zero_grad();
      loss.total.backward();
      opt.step();
      rec.total += loss.total.item();
      rec.rec += loss.rec;
      rec.intra += loss.intra;
      rec.inter += loss.inter;
      rec.cls += loss.cls;
      ++batches;
      ++batch_id;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.total /= nb;
    rec.rec /= nb;
    rec.intra /= nb;
    rec.inter /= nb;
    rec.cls /= nb;
    rec.val_clean = proposed.accuracy(val_clean);
    rec.val_occluded = proposed.accuracy(val_occluded);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);

    const double metric = 0.5 * (rec.val_clean + rec.val_occluded);
    if (metric > best_metric) {
      best_metric = metric;
      history.best_epoch = epoch;
      since_best = 0;
      best.clear();
      for (const auto& p : params) best.push_back(p.values());
    } else if (++since_best >= config.patience) {
      history.stopped_early = true;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    p.values() = best[i];
  }
  history.best_metric = best_metric;
  history.type_counts = stream.type_counts();
  history.clean_count = stream.clean_count();
  history.backbone_hash_after = parameter_hash(backbone);
  return history;
}

// -- Results -----------------------------------------------------------------

void ResultsTable::add_row(std::string name, std::vector<double> values) {
  if (values.size() != columns.size()) {
    throw std::invalid_argument("row " + name + " has " + std::to_string(values.size()) +
                                " cells, table has " + std::to_string(columns.size()));
  }
  double total = 0.0;
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("accuracy outside [0, 1]");
    total += v;
  }
  rows.push_back(std::move(name));
  means.push_back(values.empty() ? 0.0 : total / static_cast<double>(values.size()));
  cells.push_back(std::move(values));
}

double ResultsTable::at(const std::string& row, const std::string& column) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(columns.begin(), columns.end(), column);
  if (r == rows.end() || c == columns.end()) {
    throw std::out_of_range("no cell (" + row + ", " + column + ") in " + title);
  }
  return cells[static_cast<std::size_t>(r - rows.begin())]
              [static_cast<std::size_t>(c - columns.begin())];
}

double ResultsTable::mean(const std::string& row) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  if (r == rows.end()) throw std::out_of_range("no row " + row + " in " + title);
  return means[static_cast<std::size_t>(r - rows.begin())];
}

std::vector<FeatureSet> prepare_evaluation(const FeatureExtractor& extractor,
                                           const FrozenSuite& suite,
                                           const Dataset& dataset) {
  std::vector<FeatureSet> sets;
  sets.push_back(extract_feature_set(extractor, suite.clean, dataset));
  sets.back().name = "L0";
  for (const auto& cell : suite.cells) {
    sets.push_back(extract_feature_set(extractor, cell, dataset));
  }
  return sets;
}

ResultsTable evaluate_pipeline(const std::vector<std::pair<std::string, Pipeline>>& rows,
                               std::span<const FeatureSet> sets, std::string title) {
  ResultsTable table;
  table.title = std::move(title);
  for (const auto& s : sets) table.columns.push_back(s.name);
  for (const auto& [name, pipeline] : rows) {
    std::vector<double> values;
    for (const auto& s : sets) values.push_back(pipeline.accuracy(s));
    table.add_row(name, std::move(values));
  }
  return table;
}

// -- Clustering --------------------------------------------------------------

SilhouetteResult silhouette(std::span<const Tensor> points,
                            std::span<const std::size_t> labels) {
  if (points.size() != labels.size()) {
    throw std::invalid_argument("silhouette: points and labels differ in length");
  }
  SilhouetteResult result;
  const std::size_t num_classes =
      labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> count(num_classes, 0);
  for (auto l : labels) ++count[l];
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (count[labels[i]] == 1) {
      result.warnings.push_back("class " + std::to_string(labels[i]) +
                                " has a single sample; excluded");
    } else {
      keep.push_back(i);
    }
  }
  std::size_t populated = 0;
  for (auto c : count) populated += c >= 2;
  if (populated < 2) {
    throw std::invalid_argument("silhouette needs at least two classes with two samples");
  }

  const auto n = static_cast<Eigen::Index>(keep.size());
  const auto dim = static_cast<Eigen::Index>(points[keep.front()].size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = points[keep[static_cast<std::size_t>(i)]].values().transpose();
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  d = d.cwiseMax(0.0).cwiseSqrt();

  std::vector<double> class_sum(num_classes, 0.0);
  std::vector<std::size_t> class_n(num_classes, 0);
  double total = 0.0;
  std::vector<double> dist_to(num_classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(dist_to.begin(), dist_to.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) dist_to[labels[keep[static_cast<std::size_t>(j)]]] += d(i, j);
    }
    const auto li = labels[keep[static_cast<std::size_t>(i)]];
    const double a = dist_to[li] / static_cast<double>(count[li] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (c != li && count[c] >= 2) b = std::min(b, dist_to[c] / static_cast<double>(count[c]));
    }
    const double denom = std::max(a, b);
    const double s = denom > 0.0 ? (b - a) / denom : 0.0;
    class_sum[li] += s;
    ++class_n[li];
    total += s;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    result.per_class.push_back(class_n[c] ? class_sum[c] / static_cast<double>(class_n[c])
                                          : std::numeric_limits<double>::quiet_NaN());
  }
  result.mean = total / static_cast<double>(n);
  return result;
}

// -- Held-out occluder -------------------------------------------------------

std::vector<FeatureSet> select_sets(std::span<const FeatureSet> sets,
                                    std::span<const OccluderType> types) {
  std::vector<FeatureSet> out;
  for (const auto& s : sets) {
    if (s.name == "L0") {
      out.push_back(s);
      continue;
    }
    for (auto t : types) {
      if (!s.name.empty() && s.name.front() == occluder_code(t)) out.push_back(s);
    }
  }
  return out;
}

HeldoutResult heldout_occluder_protocol(const BackboneModel& backbone,
                                        const FeatureNormalizer& normalizer,
                                        const Dataset& data, const FrozenSuite& suite,
                                        TrainConfig config, OccluderType heldout,
                                        std::uint64_t ae_seed) {
  std::erase(config.policy.types, heldout);
  HeldoutResult result{{}, {}, {}, build_learn(backbone.extractor.feature_shape, ae_seed)};
  result.history = train_learn(result.ae, backbone, normalizer, data, config);
  if (result.history.type_counts[static_cast<std::size_t>(heldout)] != 0) {
    throw std::logic_error("held-out occluder appeared in training batches");
  }
  const auto sets = prepare_evaluation(backbone.extractor, suite, data);
  const std::vector<std::pair<std::string, Pipeline>> rows{
      {"baseline", {&backbone, &normalizer, nullptr}},
      {"proposed", {&backbone, &normalizer, &result.ae}}};
  const std::array<OccluderType, 1> held{heldout};
  result.seen = evaluate_pipeline(rows, select_sets(sets, config.policy.types), "seen");
  result.heldout = evaluate_pipeline(rows, select_sets(sets, held), "heldout");
  return result;
}

// -- Reports -----------------------------------------------------------------

std::string table_csv(const ResultsTable& table) {
  std::ostringstream out;
  out << "pipeline";
  for (const auto& c : table.columns) out << ',' << c;
  out << ",Mean\n";
  out << std::fixed << std::setprecision(6);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << table.rows[r];
    for (double v : table.cells[r]) out << ',' << v;
    out << ',' << table.means[r] << '\n';
  }
  return out.str();
}

std::string table_text(const ResultsTable& table) {
  std::size_t name_w = 9;
  for (const auto& r : table.rows) name_w = std::max(name_w, r.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_w)) << "Occ. Type";
  std::string level;
  // Level header line above type codes.
  std::ostringstream top;
  top << std::left << std::setw(static_cast<int>(name_w)) << "Occ. Area";
  for (const auto& c : table.columns) {
    const auto dash = c.find('-');
    const std::string lvl = dash == std::string::npos ? c : c.substr(dash + 1);
    const std::string type = dash == std::string::npos ? "-" : c.substr(0, dash);
    top << std::right << std::setw(7) << (lvl == level ? "" : lvl);
    level = lvl;
    out << std::right << std::setw(7) << type;
  }
  top << std::right << std::setw(7) << "Mean";
  out << std::right << std::setw(7) << "";
  std::ostringstream body;
  body << std::fixed << std::setprecision(1);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    body << std::left << std::setw(static_cast<int>(name_w)) << table.rows[r] << std::right;
    for (double v : table.cells[r]) body << std::setw(7) << 100.0 * v;
    body << std::setw(7) << 100.0 * table.means[r] << '\n';
  }
  return top.str() + "\n" + out.str() + "\n" + body.str();
}

std::string history_tsv(const TrainingHistory& history) {
  std::ostringstream out;
  out << "epoch\ttotal\trec\tintra\tinter\tcls\tval_clean\tval_occluded\tseconds\n";
  out << std::setprecision(8);
  for (const auto& e : history.epochs) {
    out << e.epoch << '\t' << e.total << '\t' << e.rec << '\t' << e.intra << '\t'
        << e.inter << '\t' << e.cls << '\t' << e.val_clean << '\t' << e.val_occluded
        << '\t' << std::setprecision(3) << e.seconds << std::setprecision(8) << '\n';
  }
  return out.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

void emit_report(std::span<const ResultsTable> tables, const TrainingHistory* history,
                 const Provenance& provenance, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& t : tables) {
    write_file(dir / (t.title + ".csv"), table_csv(t));
    write_file(dir / (t.title + ".txt"), table_text(t));
  }
  if (history) write_file(dir / "history.tsv", history_tsv(*history));
  std::ostringstream prov;
  for (const auto& [k, v] : provenance.entries) prov << k << ": " << v << '\n';
  for (const auto& t : tables) {
    prov << "table " << t.title << ": manifest " << t.manifest_hash << ", config "
         << t.config_hash << ", seeds";
    for (auto s : t.seeds) prov << ' ' << s;
    prov << '\n';
  }
  write_file(dir / "provenance.txt", prov.str());
}

}  // namespace learn
