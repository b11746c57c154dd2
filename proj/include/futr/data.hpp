#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "futr/common.hpp"
#include "futr/jsonio.hpp"
#include "futr/tensor.hpp"

// Video corpus layer: the segment <-> frame codec, the synthetic
// activity-grammar generator, alpha/beta observation splitting, and the
// on-disk corpus layout (mapping.txt, groundTruth/*.txt, features/*.futrf,
// manifest.json).

namespace futr {

// Ordered future actions with duration fractions summing to one.
struct SegmentSequence {
  std::vector<int> actions;
  std::vector<double> durations;

  std::size_t size() const { return actions.size(); }

  void validate() const {
    if (actions.empty() || actions.size() != durations.size())
      throw DataError("segment sequence: empty or ragged");
    double total = 0.0;
    for (std::size_t i = 0; i < actions.size(); ++i) {
      if (durations[i] <= 0.0)
        throw DataError("segment sequence: non-positive duration at index " +
                        std::to_string(i));
      if (i > 0 && actions[i] == actions[i - 1])
        throw DataError("segment sequence: repeated action at index " +
                        std::to_string(i));
      total += durations[i];
    }
    if (std::abs(total - 1.0) > 1e-6)
      throw DataError("segment sequence: durations sum to " +
                      std::to_string(total));
  }
};

// Frame t (1-based) belongs to segment i when
//   H * cum[i-1] < t <= H * cum[i],
// evaluated per frame on running double sums; the final boundary is pinned
// to H so rounding can never leave a frame unlabeled. Boundaries that are
// integers in exact arithmetic round to just under t in doubles, so the
// comparison carries a small tie epsilon (segments are >= 1 frame apart,
// far above it).
inline std::vector<int> segments_to_frames(const SegmentSequence& seq,
                                           int horizon) {
  if (horizon < 1) throw DataError("segments_to_frames: horizon < 1");
  const std::size_t n = seq.actions.size();
  std::vector<double> bound(n);
  double cum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum += seq.durations[i];
    bound[i] = static_cast<double>(horizon) * cum;
  }
  bound[n - 1] = static_cast<double>(horizon);

  const double eps = 1e-6;
  std::vector<int> frames(static_cast<std::size_t>(horizon));
  std::size_t seg = 0;
  for (int t = 1; t <= horizon; ++t) {
    while (seg + 1 < n && static_cast<double>(t) > bound[seg] + eps) ++seg;
    frames[static_cast<std::size_t>(t - 1)] = seq.actions[seg];
  }
  return frames;
}

// first max_n segments with durations renormalized to sum 1
inline SegmentSequence truncate_segments(const SegmentSequence& seq,
                                         int max_n) {
  if (max_n < 1) throw DataError("truncate_segments: max_n < 1");
  if (static_cast<int>(seq.size()) <= max_n) return seq;
  SegmentSequence out;
  double total = 0.0;
  for (int i = 0; i < max_n; ++i) total += seq.durations[i];
  for (int i = 0; i < max_n; ++i) {
    out.actions.push_back(seq.actions[i]);
    out.durations.push_back(seq.durations[i] / total);
  }
  return out;
}

// run-length encode; durations are run length / total
inline SegmentSequence frames_to_segments(const std::vector<int>& frames) {
  if (frames.empty()) throw DataError("frames_to_segments: no frames");
  SegmentSequence seq;
  std::size_t run_start = 0;
  for (std::size_t t = 1; t <= frames.size(); ++t) {
    if (t == frames.size() || frames[t] != frames[run_start]) {
      seq.actions.push_back(frames[run_start]);
      seq.durations.push_back(static_cast<double>(t - run_start) /
                              static_cast<double>(frames.size()));
      run_start = t;
    }
  }
  return seq;
}

// ---- synthetic activity grammars -------------------------------------------

struct SlotAlternative {
  std::string action;
  double prob = 1.0;
};

struct ActivityGrammar {
  std::string name;
  // each slot picks one alternative; probabilities per slot sum to 1
  std::vector<std::vector<SlotAlternative>> slots;
  // per-action frame-count range
  std::map<std::string, std::pair<int, int>> durations;

  void validate() const {
    if (slots.empty())
      throw ConfigError("grammar '" + name + "': no slots");
    for (const auto& slot : slots) {
      double p = 0.0;
      for (const auto& alt : slot) {
        p += alt.prob;
        auto it = durations.find(alt.action);
        if (it == durations.end())
          throw ConfigError("grammar '" + name + "': no duration range for '" +
                            alt.action + "'");
        if (it->second.first < 1 || it->second.first > it->second.second)
          throw ConfigError("grammar '" + name + "': bad duration range for '" +
                            alt.action + "'");
      }
      if (std::abs(p - 1.0) > 1e-6)
        throw ConfigError("grammar '" + name +
                          "': slot probabilities sum to " + std::to_string(p));
    }
  }
};

struct CorpusSpec {
  int feature_dim = 16;
  int t_min = 60;
  int t_max = 120;
  double noise_std = 0.1;
  std::vector<ActivityGrammar> grammars;

  void validate() const {
    if (feature_dim < 1) throw ConfigError("corpus spec: feature_dim < 1");
    if (t_min < 1 || t_min > t_max)
      throw ConfigError("corpus spec: bad t_range");
    if (noise_std < 0) throw ConfigError("corpus spec: negative noise_std");
    if (grammars.empty()) throw ConfigError("corpus spec: no grammars");
    for (const auto& g : grammars) g.validate();
  }

  static CorpusSpec from_json(const json& j) {
    reject_unknown_keys(
        j, "corpus spec",
        {"feature_dim", "t_range", "noise_std", "grammars"});
    CorpusSpec spec;
    spec.feature_dim = json_get(j, "corpus spec", "feature_dim", 16);
    if (j.contains("t_range")) {
      auto r = json_require<std::vector<int>>(j, "corpus spec", "t_range");
      if (r.size() != 2) throw ConfigError("corpus spec: t_range needs 2 ints");
      spec.t_min = r[0];
      spec.t_max = r[1];
    }
    spec.noise_std = json_get(j, "corpus spec", "noise_std", 0.1);
    for (const auto& gj : json_require<json>(j, "corpus spec", "grammars")) {
      reject_unknown_keys(gj, "grammar", {"name", "slots", "durations"});
      ActivityGrammar g;
      g.name = json_require<std::string>(gj, "grammar", "name");
      for (const auto& slot : json_require<json>(gj, "grammar", "slots")) {
        std::vector<SlotAlternative> alts;
        for (const auto& aj : slot) {
          reject_unknown_keys(aj, "slot alternative", {"action", "p"});
          alts.push_back(
              {json_require<std::string>(aj, "slot alternative", "action"),
               json_get(aj, "slot alternative", "p", 1.0)});
        }
        g.slots.push_back(std::move(alts));
      }
      for (const auto& [name, range] :
           json_require<std::map<std::string, std::vector<int>>>(gj, "grammar",
                                                                 "durations")) {
        if (range.size() != 2)
          throw ConfigError("grammar durations for '" + name +
                            "' need [min,max]");
        g.durations[name] = {range[0], range[1]};
      }
      spec.grammars.push_back(std::move(g));
    }
    spec.validate();
    return spec;
  }

  static CorpusSpec load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open grammar spec: " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("grammar spec " + path + ": " + e.what());
    }
    return from_json(j);
  }
};

template <typename Real>
struct VideoSample {
  std::string id;
  int activity = 0;
  Tensor<Real> features;          // T x C
  std::vector<int> frame_labels;  // length T

  int frames() const { return static_cast<int>(frame_labels.size()); }
};

template <typename Real>
struct Corpus {
  std::vector<std::string> class_names;     // class id -> action name
  std::vector<std::string> activity_names;  // activity id -> grammar name
  int feature_dim = 0;
  std::vector<VideoSample<Real>> videos;
  std::vector<std::size_t> train_split;
  std::vector<std::size_t> test_split;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Pure function of (spec, count, seed). Features are a fixed per-class
// prototype direction plus isotropic noise; one in five videos lands in the
// test split.
template <typename Real>
Corpus<Real> generate_corpus(const CorpusSpec& spec, int count,
                             std::uint64_t seed) {
  spec.validate();
  Corpus<Real> corpus;
  corpus.feature_dim = spec.feature_dim;

  std::set<std::string> action_names;
  for (const auto& g : spec.grammars) {
    corpus.activity_names.push_back(g.name);
    for (const auto& slot : g.slots)
      for (const auto& alt : slot) action_names.insert(alt.action);
  }
  corpus.class_names.assign(action_names.begin(), action_names.end());
  std::map<std::string, int> class_id;
  for (std::size_t i = 0; i < corpus.class_names.size(); ++i)
    class_id[corpus.class_names[i]] = static_cast<int>(i);

  Rng rng(mix_seed(seed, 0x636f7270));

  // unit-norm random prototypes; near-orthogonal for the dims used here
  const int c = spec.feature_dim;
  std::vector<std::vector<Real>> proto(corpus.class_names.size());
  for (auto& p : proto) {
    p.resize(static_cast<std::size_t>(c));
    double norm = 0.0;
    for (auto& v : p) {
      const double x = rng.normal();
      v = static_cast<Real>(x);
      norm += x * x;
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (auto& v : p) v = static_cast<Real>(v / norm);
  }

  for (int vi = 0; vi < count; ++vi) {
    const auto gi = static_cast<std::size_t>(rng.uniform_int(
        0, static_cast<std::int64_t>(spec.grammars.size()) - 1));
    const auto& g = spec.grammars[gi];

    std::vector<int> seg_actions;
    std::vector<int> seg_frames;
    for (const auto& slot : g.slots) {
      const double u = rng.uniform();
      double acc = 0.0;
      const SlotAlternative* pick = &slot.back();
      for (const auto& alt : slot) {
        acc += alt.prob;
        if (u < acc) {
          pick = &alt;
          break;
        }
      }
      const auto range = g.durations.at(pick->action);
      const int frames =
          static_cast<int>(rng.uniform_int(range.first, range.second));
      const int action = class_id.at(pick->action);
      if (!seg_actions.empty() && seg_actions.back() == action) {
        seg_frames.back() += frames;  // merge adjacent repeats
      } else {
        seg_actions.push_back(action);
        seg_frames.push_back(frames);
      }
    }

    // rescale toward a target length in t_range, keeping every segment >= 1
    int total = 0;
    for (int f : seg_frames) total += f;
    const int target =
        static_cast<int>(rng.uniform_int(spec.t_min, spec.t_max));
    const double scale = static_cast<double>(target) / total;
    std::vector<int> labels;
    for (std::size_t i = 0; i < seg_actions.size(); ++i) {
      const int len = std::max(
          1, static_cast<int>(std::lround(seg_frames[i] * scale)));
      labels.insert(labels.end(), static_cast<std::size_t>(len),
                    seg_actions[i]);
    }

    VideoSample<Real> sample;
    sample.id = "video_" + std::to_string(vi);
    sample.activity = static_cast<int>(gi);
    sample.frame_labels = std::move(labels);
    const int t = sample.frames();
    sample.features = Tensor<Real>::zeros(
        {static_cast<std::size_t>(t), static_cast<std::size_t>(c)});
    for (int f = 0; f < t; ++f) {
      const auto& p = proto[static_cast<std::size_t>(
          sample.frame_labels[static_cast<std::size_t>(f)])];
      for (int d = 0; d < c; ++d)
        sample.features.at(static_cast<std::size_t>(f),
                           static_cast<std::size_t>(d)) =
            p[static_cast<std::size_t>(d)] +
            static_cast<Real>(spec.noise_std * rng.normal());
    }
    corpus.videos.push_back(std::move(sample));
  }

  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    if (i % 5 == 4)
      corpus.test_split.push_back(i);
    else
      corpus.train_split.push_back(i);
  }
  return corpus;
}

// ---- observation splitting ---------------------------------------------------

template <typename Real>
struct ObservationSplit {
  Tensor<Real> observed;          // T^O x C, stride-sampled
  std::vector<int> seg_labels;    // label at each sampled frame
  std::vector<int> future_frames; // ground truth for the horizon
  SegmentSequence target;
  double alpha = 0.0, beta = 0.0;
  int stride = 1;
  int horizon = 0;
};

// T^O = floor(alpha*T / tau), sampled at indices {0, tau, 2*tau, ...};
// the future covers frames floor(alpha*T) .. floor(alpha*T)+floor(beta*T)-1.
// The 1e-9 nudge keeps decimal ratios like 0.3 from flooring one short.
template <typename Real>
ObservationSplit<Real> make_observation(const VideoSample<Real>& sample,
                                        double alpha, double beta,
                                        int stride) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw DataError("make_observation: alpha out of (0,1)");
  if (!(beta > 0.0 && beta <= 1.0 - alpha + 1e-12))
    throw DataError("make_observation: beta out of (0, 1-alpha]");
  if (stride < 1) throw DataError("make_observation: stride < 1");

  const int t = sample.frames();
  const int n_obs =
      static_cast<int>(std::floor(alpha * t + 1e-9));
  const int t_obs =
      static_cast<int>(std::floor(alpha * t / stride + 1e-9));
  const int horizon = static_cast<int>(std::floor(beta * t + 1e-9));
  if (t_obs < 1 || horizon < 1)
    throw DataError("make_observation: degenerate split (T=" +
                    std::to_string(t) + ", alpha=" + std::to_string(alpha) +
                    ", beta=" + std::to_string(beta) + ", stride=" +
                    std::to_string(stride) + ")");

  ObservationSplit<Real> split;
  split.alpha = alpha;
  split.beta = beta;
  split.stride = stride;
  split.horizon = horizon;

  const std::size_t c = sample.features.cols();
  split.observed = Tensor<Real>::zeros(
      {static_cast<std::size_t>(t_obs), c});
  split.seg_labels.resize(static_cast<std::size_t>(t_obs));
  for (int i = 0; i < t_obs; ++i) {
    const auto src = static_cast<std::size_t>(i * stride);
    for (std::size_t j = 0; j < c; ++j)
      split.observed.at(static_cast<std::size_t>(i), j) =
          sample.features.at(src, j);
    split.seg_labels[static_cast<std::size_t>(i)] =
        sample.frame_labels[src];
  }

  split.future_frames.assign(
      sample.frame_labels.begin() + n_obs,
      sample.frame_labels.begin() + n_obs + horizon);
  split.target = frames_to_segments(split.future_frames);
  return split;
}

// ---- on-disk formats -----------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.write(buf, 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path,
                              const char* what) {
  char buf[4];
  if (!in.read(buf, 4))
    throw DataError(path + ": truncated while reading " + what + " at offset " +
                    std::to_string(in.tellg()));
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

}  // namespace detail

inline constexpr char kFeatureMagic[] = "FUTRF1";

// magic "FUTRF1", u32 rows, u32 cols, rows*cols little-endian f32, row-major
template <typename Real>
void save_features(const std::string& path, const Tensor<Real>& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file: " + path);
  out.write(kFeatureMagic, 6);
  detail::write_u32(out, static_cast<std::uint32_t>(features.rows()));
  detail::write_u32(out, static_cast<std::uint32_t>(features.cols()));
  for (const Real v : features.values()) {
    const float f = static_cast<float>(v);
    char buf[4];
    std::memcpy(buf, &f, 4);
    out.write(buf, 4);
  }
  if (!out) throw DataError("short write to feature file: " + path);
}

template <typename Real>
Tensor<Real> load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file: " + path);
  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, kFeatureMagic, 6) != 0)
    throw DataError(path + ": bad magic, expected FUTRF1 at offset 0");
  const std::uint32_t rows = detail::read_u32(in, path, "row count");
  const std::uint32_t cols = detail::read_u32(in, path, "column count");
  auto out = Tensor<Real>::zeros({rows, cols});
  auto& v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    char buf[4];
    if (!in.read(buf, 4))
      throw DataError(path + ": payload ends at element " + std::to_string(i) +
                      " of " + std::to_string(v.size()) + " (offset " +
                      std::to_string(14 + i * 4) + ")");
    float f;
    std::memcpy(&f, buf, 4);
    v[i] = static_cast<Real>(f);
  }
  char extra;
  if (in.read(&extra, 1))
    throw DataError(path + ": trailing bytes after " +
                    std::to_string(v.size()) + " payload elements");
  return out;
}

// lines of "id<space>name", ids contiguous from 0
inline void save_mapping(const std::string& path,
                         const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write mapping file: " + path);
  for (std::size_t i = 0; i < class_names.size(); ++i)
    out << i << " " << class_names[i] << "\n";
}

inline std::vector<std::string> load_mapping(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mapping file: " + path);
  std::map<int, std::string> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int id;
    std::string name;
    if (!(ls >> id >> name))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected 'id name'");
    if (by_id.count(id))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": duplicate id " + std::to_string(id));
    by_id[id] = name;
  }
  std::vector<std::string> names;
  for (const auto& [id, name] : by_id) {
    if (id != static_cast<int>(names.size()))
      throw DataError(path + ": ids are not contiguous from 0 (saw " +
                      std::to_string(id) + ")");
    names.push_back(name);
  }
  if (names.empty()) throw DataError(path + ": empty mapping");
  return names;
}

// one action name per line per frame
inline void save_groundtruth(const std::string& path,
                             const std::vector<int>& labels,
                             const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ground truth: " + path);
  for (int l : labels) out << class_names[static_cast<std::size_t>(l)] << "\n";
}

inline std::vector<int> load_groundtruth(
    const std::string& path, const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground truth: " + path);
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < class_names.size(); ++i)
    ids[class_names[i]] = static_cast<int>(i);
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto it = ids.find(line);
    if (it == ids.end())
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": label '" + line + "' is not in the mapping");
    labels.push_back(it->second);
  }
  if (labels.empty()) throw DataError(path + ": no frames");
  return labels;
}

template <typename Real>
void save_corpus(const std::string& dir, const Corpus<Real>& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "features");
  fs::create_directories(fs::path(dir) / "groundTruth");
  save_mapping((fs::path(dir) / "mapping.txt").string(), corpus.class_names);

  json manifest;
  manifest["feature_dim"] = corpus.feature_dim;
  manifest["mapping"] = "mapping.txt";
  manifest["activities"] = corpus.activity_names;
  json videos = json::array();
  for (const auto& v : corpus.videos) {
    const std::string feat = "features/" + v.id + ".futrf";
    const std::string gt = "groundTruth/" + v.id + ".txt";
    save_features((fs::path(dir) / feat).string(), v.features);
    save_groundtruth((fs::path(dir) / gt).string(), v.frame_labels,
                     corpus.class_names);
    videos.push_back({{"id", v.id},
                      {"activity", v.activity},
                      {"frames", v.frames()},
                      {"features", feat},
                      {"groundtruth", gt}});
  }
  manifest["videos"] = std::move(videos);
  manifest["splits"] = {{"train", corpus.train_split},
                        {"test", corpus.test_split}};
  std::ofstream out((fs::path(dir) / "manifest.json").string());
  if (!out) throw DataError("cannot write manifest under " + dir);
  out << manifest.dump(2) << "\n";
}

template <typename Real>
Corpus<Real> load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw DataError(manifest_path + ": " + e.what());
  }

  Corpus<Real> corpus;
  corpus.feature_dim = json_require<int>(manifest, "manifest", "feature_dim");
  corpus.class_names = load_mapping(
      (fs::path(dir) /
       json_get<std::string>(manifest, "manifest", "mapping", "mapping.txt"))
          .string());
  corpus.activity_names = json_get<std::vector<std::string>>(
      manifest, "manifest", "activities", {});

  for (const auto& vj : json_require<json>(manifest, "manifest", "videos")) {
    VideoSample<Real> v;
    v.id = json_require<std::string>(vj, "manifest video", "id");
    v.activity = json_get(vj, "manifest video", "activity", 0);
    v.features = load_features<Real>(
        (fs::path(dir) /
         json_require<std::string>(vj, "manifest video", "features"))
            .string());
    v.frame_labels = load_groundtruth(
        (fs::path(dir) /
         json_require<std::string>(vj, "manifest video", "groundtruth"))
            .string(),
        corpus.class_names);
    if (static_cast<int>(v.features.rows()) != v.frames())
      throw DataError(v.id + ": " + std::to_string(v.features.rows()) +
                      " feature rows vs " + std::to_string(v.frames()) +
                      " ground-truth frames");
    if (static_cast<int>(v.features.cols()) != corpus.feature_dim)
      throw DataError(v.id + ": feature dim " +
                      std::to_string(v.features.cols()) + " vs manifest " +
                      std::to_string(corpus.feature_dim));
    corpus.videos.push_back(std::move(v));
  }

  if (manifest.contains("splits")) {
    const auto& s = manifest["splits"];
    corpus.train_split =
        json_get<std::vector<std::size_t>>(s, "splits", "train", {});
    corpus.test_split =
        json_get<std::vector<std::size_t>>(s, "splits", "test", {});
  }
  if (corpus.train_split.empty() && corpus.test_split.empty())
    for (std::size_t i = 0; i < corpus.videos.size(); ++i)
      corpus.train_split.push_back(i);
  return corpus;
}

}  // namespace futr
