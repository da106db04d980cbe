#include "learn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "learn/serialize.hpp"

namespace learn {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("malformed hex value '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("malformed number '" + s + "'");
  }
  return v;
}

Split parse_split(const std::string& s) {
  for (auto sp : {Split::train, Split::val, Split::test}) {
    if (s == split_name(sp)) return sp;
  }
  throw std::runtime_error("unknown split '" + s + "'");
}

// Splits text into body and trailing "checksum <hex>" line and verifies it.
std::string verified_body(std::istream& in, const char* what) {
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  const auto pos = text.rfind("checksum ");
  if (pos == std::string::npos || (pos > 0 && text[pos - 1] != '\n')) {
    throw std::runtime_error(std::string(what) + ": missing checksum line");
  }
  std::string body = text.substr(0, pos);
  std::string stored = text.substr(pos + 9);
  while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) {
    stored.pop_back();
  }
  const auto actual = hash_bytes(body.data(), body.size());
  if (hex64(actual) != stored) {
    throw std::runtime_error(std::string(what) + ": checksum mismatch (stored " +
                             stored + ", computed " + hex64(actual) + ")");
  }
  return body;
}

void write_with_checksum(std::ostream& out, const std::string& body) {
  out << body << "checksum " << hex64(hash_bytes(body.data(), body.size()))
      << '\n';
  if (!out) throw std::runtime_error("write failed");
}

std::string expect_key(std::istringstream& line, const char* key) {
  std::string k;
  line >> k;
  if (k != key) {
    throw std::runtime_error(std::string("expected '") + key + "', found '" +
                             k + "'");
  }
  return k;
}

std::istringstream next_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("unexpected end of file");
  return std::istringstream(line);
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::size_t DatasetManifest::count(Split split) const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.split == split;
  return n;
}

std::vector<SampleRecord> DatasetManifest::records(Split split) const {
  std::vector<SampleRecord> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

bool DatasetManifest::operator==(const DatasetManifest& o) const {
  return name == o.name && class_names == o.class_names &&
         image.channels == o.image.channels && image.height == o.image.height &&
         image.width == o.image.width && seed == o.seed && samples == o.samples;
}

DatasetManifest generate_synthetic_dataset(std::size_t num_classes,
                                           std::size_t per_class,
                                           std::size_t image_size,
                                           std::uint64_t seed) {
  const auto families = dataset_shape_families();
  if (num_classes < 2 || num_classes > families.size()) {
    throw std::invalid_argument("num_classes must be in [2, " +
                                std::to_string(families.size()) + "], got " +
                                std::to_string(num_classes));
  }
  if (per_class < 10) {
    throw std::invalid_argument("per_class must be at least 10 to train, got " +
                                std::to_string(per_class));
  }
  if (image_size < 32) {
    throw std::invalid_argument("image_size must be at least 32, got " +
                                std::to_string(image_size));
  }
  DatasetManifest m;
  m.seed = seed;
  m.image = {1, image_size, image_size};
  for (std::size_t c = 0; c < num_classes; ++c) {
    m.class_names.emplace_back(families[c]);
  }
  const std::size_t val = per_class / 10;
  const std::size_t test = per_class / 5;
  std::uint64_t id = 0;
  for (std::size_t i = 0; i < per_class + val + test; ++i) {
    const Split split = i < per_class         ? Split::train
                        : i < per_class + val ? Split::val
                                              : Split::test;
    for (std::size_t c = 0; c < num_classes; ++c, ++id) {
      m.samples.push_back({id, c, split, derive_seed(seed, id)});
    }
  }
  return m;
}

void write_manifest(std::ostream& out, const DatasetManifest& m) {
  std::ostringstream body;
  body << "manifest v1\n";
  body << "name " << m.name << '\n';
  body << "seed " << m.seed << '\n';
  body << "image " << m.image.channels << ' ' << m.image.height << ' '
       << m.image.width << '\n';
  body << "classes";
  for (const auto& c : m.class_names) body << ' ' << c;
  body << '\n';
  body << "splits train=" << m.count(Split::train)
       << " val=" << m.count(Split::val) << " test=" << m.count(Split::test)
       << '\n';
  body << "records " << m.samples.size() << '\n';
  for (const auto& s : m.samples) {
    body << s.id << ' ' << s.label << ' ' << split_name(s.split) << ' '
         << hex64(s.seed) << '\n';
  }
  write_with_checksum(out, body.str());
}

DatasetManifest read_manifest(std::istream& in) {
  std::istringstream body(verified_body(in, "manifest"));
  DatasetManifest m;
  {
    auto l = next_line(body);
    std::string tag, version;
    l >> tag >> version;
    if (tag != "manifest" || version != "v1") {
      throw std::runtime_error("not a v1 manifest");
    }
  }
  {
    auto l = next_line(body);
    expect_key(l, "name");
    l >> m.name;
  }
  {
    auto l = next_line(body);
    expect_key(l, "seed");
    l >> m.seed;
  }
  {
    auto l = next_line(body);
    expect_key(l, "image");
    l >> m.image.channels >> m.image.height >> m.image.width;
  }
  {
    auto l = next_line(body);
    expect_key(l, "classes");
    std::string c;
    while (l >> c) m.class_names.push_back(c);
  }
  next_line(body);  // split counts, recomputed from records
  std::size_t n = 0;
  {
    auto l = next_line(body);
    expect_key(l, "records");
    l >> n;
  }
  m.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto l = next_line(body);
    SampleRecord r;
    std::string split, seed;
    if (!(l >> r.id >> r.label >> split >> seed)) {
      throw std::runtime_error("malformed manifest record " + std::to_string(i));
    }
    r.split = parse_split(split);
    r.seed = parse_hex64(seed);
    if (r.label >= m.class_names.size()) {
      throw std::runtime_error("manifest record " + std::to_string(r.id) +
                               " has label outside the class list");
    }
    m.samples.push_back(r);
  }
  return m;
}

std::uint64_t manifest_hash(const DatasetManifest& manifest) {
  std::ostringstream out;
  write_manifest(out, manifest);
  const auto text = out.str();
  return hash_bytes(text.data(), text.size());
}

LabeledImage render_sample(const DatasetManifest& manifest,
                           const SampleRecord& record) {
  return {render_shape_image(record.label, record.seed, manifest.image),
          record.label, record.id};
}

Dataset::Dataset(DatasetManifest manifest) : manifest_(std::move(manifest)) {
  std::uint64_t max_id = 0;
  for (const auto& r : manifest_.samples) max_id = std::max(max_id, r.id);
  index_.assign(manifest_.samples.empty() ? 0 : max_id + 1,
                {Split::train, static_cast<std::size_t>(-1)});
  for (const auto& r : manifest_.samples) {
    auto& bucket = images_[static_cast<std::size_t>(r.split)];
    index_[r.id] = {r.split, bucket.size()};
    bucket.push_back(render_sample(manifest_, r));
  }
}

const std::vector<LabeledImage>& Dataset::images(Split split) const {
  return images_[static_cast<std::size_t>(split)];
}

const LabeledImage& Dataset::by_id(std::uint64_t id) const {
  if (id >= index_.size() || index_[id].second == static_cast<std::size_t>(-1)) {
    throw std::out_of_range("no sample with id " + std::to_string(id));
  }
  const auto [split, pos] = index_[id];
  return images_[static_cast<std::size_t>(split)][pos];
}

void write_pnm(std::ostream& out, const Tensor& image) {
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) {
    throw std::invalid_argument("PNM output needs 1 or 3 channels, got " +
                                to_string(image.shape()));
  }
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = std::clamp(image[ch * h * w + i], 0.0, 1.0);
      out.put(static_cast<char>(std::lround(v * 255.0)));
    }
  }
}

BatchStream::BatchStream(std::span<const LabeledImage> images,
                         std::size_t batch_size, OcclusionPolicy policy,
                         std::uint64_t seed)
    : images_(images),
      batch_size_(batch_size),
      policy_(std::move(policy)),
      seed_(seed) {
  if (images_.empty()) {
    throw std::invalid_argument("training stream needs a non-empty image set");
  }
  if (batch_size_ < 2) {
    throw std::invalid_argument("batch size must be at least 2");
  }
  if (policy_.types.empty()) {
    throw std::invalid_argument("occlusion policy has no occluder types");
  }
  if (!(policy_.min_coverage >= 0.0 && policy_.max_coverage <= 0.9 &&
        policy_.min_coverage <= policy_.max_coverage)) {
    throw std::invalid_argument("occlusion policy coverage range invalid");
  }
  start_epoch(0);
}

void BatchStream::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(images_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, epoch));
  shuffle(order_.begin(), order_.end(), rng);
}

std::size_t BatchStream::batches_per_epoch() const {
  const auto full = images_.size() / batch_size_;
  return full + (images_.size() % batch_size_ >= 2 ? 1 : 0);
}

std::optional<Batch> BatchStream::next() {
  const auto remaining = order_.size() - cursor_;
  if (remaining < 2) return std::nullopt;
  const auto n = std::min(batch_size_, remaining);
  Batch batch;
  batch.reserve(n);
  const auto epoch_seed = derive_seed(seed_, epoch_);
  for (std::size_t i = 0; i < n; ++i, ++cursor_) {
    const auto& image = images_[order_[cursor_]];
    Rng rng(derive_seed(epoch_seed, 0x100000 + cursor_));
    TrainingPair pair{image, {}, rng.bernoulli(policy_.clean_fraction)};
    if (pair.clean_pass) {
      pair.occluded = apply_occlusion(image, 0.0, policy_.types.front(), rng);
      ++clean_count_;
    } else {
      const auto type = policy_.types[rng.below(policy_.types.size())];
      const double target =
          rng.uniform(policy_.min_coverage, policy_.max_coverage);
      pair.occluded = apply_occlusion(image, target, type, rng);
      ++type_counts_[static_cast<std::size_t>(type)];
    }
    batch.push_back(std::move(pair));
  }
  return batch;
}

std::string cell_name(OccluderType type, OcclusionLevel level) {
  return std::string(1, occluder_code(type)) + "-" +
         std::string(level_name(level));
}

namespace {

double draw_target(OcclusionLevel level, Rng& rng) {
  auto [lo, hi] = level_band(level);
  if (level == OcclusionLevel::L0) return 0.0;
  return rng.uniform(lo + kCoverageTolerance, hi - kCoverageTolerance);
}

}  // namespace

FrozenSuite freeze_test_sets(const DatasetManifest& manifest,
                             std::span<const OccluderType> types,
                             std::span<const OcclusionLevel> levels,
                             std::uint64_t seed, Split split) {
  const auto records = manifest.records(split);
  if (records.empty()) {
    throw std::invalid_argument("cannot freeze test sets: split '" +
                                std::string(split_name(split)) + "' is empty");
  }
  FrozenSuite suite;
  suite.clean.name = "L0";
  for (const auto& r : records) {
    suite.clean.records.push_back({r.id, OccluderType::white, 0.0, 0});
  }
  for (auto level : levels) {
    if (level == OcclusionLevel::L0) continue;
    for (auto type : types) {
      FrozenSet set;
      set.name = cell_name(type, level);
      set.level = level;
      set.type = type;
      Rng rng(derive_seed(seed, hash_bytes(set.name.data(), set.name.size())));
      for (const auto& r : records) {
        set.records.push_back({r.id, type, draw_target(level, rng), rng.bits()});
      }
      suite.cells.push_back(std::move(set));
    }
  }
  return suite;
}

FrozenSet freeze_mixed_set(const DatasetManifest& manifest, Split split,
                           std::span<const OccluderType> types,
                           std::uint64_t seed) {
  if (types.empty()) throw std::invalid_argument("no occluder types given");
  FrozenSet set;
  set.name = "mixed-" + std::string(split_name(split));
  set.level = OcclusionLevel::L2;
  Rng rng(derive_seed(seed, 0x6d69786564ULL));
  for (const auto& r : manifest.records(split)) {
    const auto type = types[rng.below(types.size())];
    const auto level = kOccludedLevels[rng.below(kOccludedLevels.size())];
    set.records.push_back({r.id, type, draw_target(level, rng), rng.bits()});
  }
  return set;
}

std::vector<OccludedImage> materialize(const FrozenSet& set,
                                       const Dataset& dataset) {
  std::vector<OccludedImage> out;
  out.reserve(set.records.size());
  for (const auto& r : set.records) {
    Rng rng(r.seed);
    out.push_back(apply_occlusion(dataset.by_id(r.sample_id), r.target, r.type,
                                  rng));
  }
  return out;
}

namespace {

void write_set(std::ostream& body, const FrozenSet& set) {
  body << "set " << set.name << ' ' << level_name(set.level) << ' '
       << (set.type ? std::string(1, occluder_code(*set.type)) : "-") << ' '
       << set.records.size() << '\n';
  for (const auto& r : set.records) {
    body << r.sample_id << ' ' << occluder_code(r.type) << ' '
         << format_double(r.target) << ' ' << hex64(r.seed) << '\n';
  }
}

FrozenSet read_set(std::istream& body) {
  auto l = next_line(body);
  expect_key(l, "set");
  FrozenSet set;
  std::string level, type;
  std::size_t n = 0;
  if (!(l >> set.name >> level >> type >> n)) {
    throw std::runtime_error("malformed frozen set header");
  }
  set.level = parse_level(level);
  if (type != "-") set.type = parse_occluder(type);
  for (std::size_t i = 0; i < n; ++i) {
    auto rl = next_line(body);
    FrozenRecord r;
    std::string t, target, seed;
    if (!(rl >> r.sample_id >> t >> target >> seed)) {
      throw std::runtime_error("malformed frozen record in set " + set.name);
    }
    r.type = parse_occluder(t);
    r.target = parse_double(target);
    r.seed = parse_hex64(seed);
    set.records.push_back(r);
  }
  return set;
}

}  // namespace

void write_frozen_suite(std::ostream& out, const FrozenSuite& suite) {
  std::ostringstream body;
  body << "frozen-suite v1\n";
  body << "sets " << suite.cells.size() + 1 << '\n';
  write_set(body, suite.clean);
  for (const auto& s : suite.cells) write_set(body, s);
  write_with_checksum(out, body.str());
}

FrozenSuite read_frozen_suite(std::istream& in) {
  std::istringstream body(verified_body(in, "frozen suite"));
  {
    auto l = next_line(body);
    std::string tag, version;
    l >> tag >> version;
    if (tag != "frozen-suite" || version != "v1") {
      throw std::runtime_error("not a v1 frozen suite");
    }
  }
  std::size_t n = 0;
  {
    auto l = next_line(body);
    expect_key(l, "sets");
    l >> n;
  }
  if (n == 0) throw std::runtime_error("frozen suite without sets");
  FrozenSuite suite;
  suite.clean = read_set(body);
  for (std::size_t i = 1; i < n; ++i) suite.cells.push_back(read_set(body));
  return suite;
}

}  // namespace learn
