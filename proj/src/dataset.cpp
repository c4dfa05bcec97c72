#include "ctrm/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "ctrm/errors.hpp"
#include "ctrm/params.hpp"

namespace ctrm {

namespace {

using json = nlohmann::json;

const std::vector<std::vector<std::string>>& event_table() {
  static const std::vector<std::vector<std::string>> table{
      {"ball", "rolls"},   {"glass", "breaks"}, {"dog", "barks"},   {"door", "opens"},
      {"light", "flashes"}, {"car", "stops"},    {"bell", "rings"},  {"man", "jumps"},
      {"cat", "runs"},     {"water", "spills"}, {"fire", "starts"}, {"alarm", "sounds"},
      {"bird", "flies"},   {"child", "cries"},  {"tree", "falls"},  {"phone", "rings"},
  };
  return table;
}

const std::map<std::pair<std::string, std::string>, int>& phrase_index() {
  static const auto index = [] {
    std::map<std::pair<std::string, std::string>, int> m;
    const auto& table = event_table();
    for (std::size_t i = 0; i < table.size(); ++i) m.emplace(std::pair{table[i][0], table[i][1]}, static_cast<int>(i));
    return m;
  }();
  return index;
}

void append_phrase(std::vector<std::string>& words, int type) {
  const auto& p = event_phrase(type);
  words.insert(words.end(), p.begin(), p.end());
}

}  // namespace

void GeneratorConfig::validate() const {
  if (n_event_types < 1) throw ConfigError("data.n_event_types must be >= 1");
  if (static_cast<std::size_t>(n_event_types) > event_name_count()) {
    throw ConfigError("vocabulary overflow: data.n_event_types " + std::to_string(n_event_types) +
                      " exceeds the " + std::to_string(event_name_count()) + " available event names");
  }
  if (events_per_video.min < 1 || events_per_video.max < events_per_video.min) {
    throw ConfigError("data.events_per_video must be a non-empty range of positive counts");
  }
  if (events_per_video.max > n_event_types) {
    throw ConfigError("data.events_per_video.max exceeds data.n_event_types (event types are distinct per video)");
  }
  if (frames_per_event.min < 1 || frames_per_event.max < frames_per_event.min) {
    throw ConfigError("data.frames_per_event must be a non-empty range of positive counts");
  }
  if (d_v == 0) throw ConfigError("data.d_v must be positive");
  if (!(feature_noise_sigma >= 0.0)) throw ConfigError("data.feature_noise_sigma must be non-negative");
  if (!(causal_edge_prob >= 0.0 && causal_edge_prob <= 1.0)) throw ConfigError("data.causal_edge_prob must lie in [0, 1]");
}

std::size_t event_name_count() { return event_table().size(); }

const std::vector<std::string>& event_phrase(int type) { return event_table().at(static_cast<std::size_t>(type)); }

const Vocabulary& caption_vocabulary() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> words;
    std::set<std::string> seen;
    for (const auto& phrase : event_table())
      for (const auto& w : phrase)
        if (seen.insert(w).second) words.push_back(w);
    for (const char* c : {"then", "so", "because"}) words.emplace_back(c);
    return Vocabulary(words);
  }();
  return vocab;
}

std::vector<VideoSample> generate_dataset(const GeneratorConfig& config, std::size_t n_samples) {
  config.validate();
  if (n_samples == 0) throw ConfigError("n_samples must be >= 1");
  const auto n_types = static_cast<std::size_t>(config.n_event_types);
  Rng rng(config.seed);

  std::normal_distribution<double> standard(0.0, 1.0);
  Tensor prototypes({n_types, config.d_v});
  for (auto& v : prototypes.data()) v = standard(rng);

  std::bernoulli_distribution linked(config.causal_edge_prob);
  std::vector<std::vector<bool>> relation(n_types, std::vector<bool>(n_types, false));
  for (std::size_t a = 0; a < n_types; ++a)
    for (std::size_t b = 0; b < n_types; ++b)
      if (a != b) relation[a][b] = linked(rng);

  std::uniform_int_distribution<int> event_count(config.events_per_video.min, config.events_per_video.max);
  std::uniform_int_distribution<int> frame_count(config.frames_per_event.min, config.frames_per_event.max);
  const auto& vocab = caption_vocabulary();

  std::vector<VideoSample> samples;
  samples.reserve(n_samples);
  std::vector<int> order(n_types);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto k = static_cast<std::size_t>(event_count(rng));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<int> types(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));

    VideoSample sample;
    std::vector<double> frames;
    std::vector<std::size_t> anchors;
    for (const int type : types) {
      anchors.push_back(sample.event_ids.size());
      const int count = frame_count(rng);
      for (int f = 0; f < count; ++f) {
        const auto proto = prototypes.row(static_cast<std::size_t>(type));
        for (double p : proto) frames.push_back(config.feature_noise_sigma > 0.0 ? p + config.feature_noise_sigma * standard(rng) : p);
        sample.event_ids.push_back(type);
      }
    }
    sample.frames = Tensor({sample.event_ids.size(), config.d_v}, std::move(frames));

    std::vector<std::string> words;
    append_phrase(words, types[0]);
    for (std::size_t j = 1; j < k; ++j) {
      sample.causal_edges.emplace_back(anchors[j - 1], anchors[j]);
      std::vector<std::size_t> causes;
      for (std::size_t i = 0; i + 1 < j; ++i) {
        if (relation[static_cast<std::size_t>(types[i])][static_cast<std::size_t>(types[j])]) causes.push_back(i);
      }
      for (auto i : causes) sample.causal_edges.emplace_back(anchors[i], anchors[j]);
      words.emplace_back(causes.empty() ? "then" : "so");
      append_phrase(words, types[j]);
      if (!causes.empty()) {
        words.emplace_back("because");
        append_phrase(words, types[causes.front()]);
      }
    }
    std::sort(sample.causal_edges.begin(), sample.causal_edges.end());
    sample.caption = vocab.encode(words);
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<std::string> caption_words(const VideoSample& sample) { return caption_vocabulary().decode(sample.caption); }

void write_dataset(const std::vector<VideoSample>& samples, const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& s : samples) {
    json frames = json::array();
    for (std::size_t t = 0; t < s.frames.rows(); ++t) {
      const auto r = s.frames.row(t);
      frames.push_back(std::vector<double>(r.begin(), r.end()));
    }
    json edges = json::array();
    for (const auto& [a, b] : s.causal_edges) edges.push_back({a, b});
    const json record{{"frames", std::move(frames)},
                      {"caption", vocab.decode(s.caption)},
                      {"causal_edges", std::move(edges)},
                      {"event_ids", s.event_ids}};
    out << record.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::vector<VideoSample> read_dataset(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<VideoSample> samples;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    VideoSample s;
    try {
      const auto record = json::parse(line);
      const auto& frames = record.at("frames");
      if (!frames.is_array() || frames.empty()) throw ParseError(line_no, "'frames' must be a non-empty array");
      const auto d = frames.at(0).size();
      if (d == 0) throw ParseError(line_no, "frame vectors must be non-empty");
      std::vector<double> data;
      for (const auto& f : frames) {
        if (!f.is_array() || f.size() != d) throw ParseError(line_no, "frames have inconsistent widths");
        for (const auto& v : f) data.push_back(v.get<double>());
      }
      if (width == 0) width = d;
      if (d != width) {
        throw SchemaError("line " + std::to_string(line_no) + ": frame width " + std::to_string(d) +
                          " differs from " + std::to_string(width) + " in earlier samples");
      }
      s.frames = Tensor({frames.size(), d}, std::move(data));
      s.caption = vocab.encode(record.at("caption").get<std::vector<std::string>>());
      for (const auto& e : record.at("causal_edges")) {
        if (!e.is_array() || e.size() != 2) throw ParseError(line_no, "causal edges must be [from, to] pairs");
        const auto a = e[0].get<std::size_t>();
        const auto b = e[1].get<std::size_t>();
        if (a >= s.frames.rows() || b >= s.frames.rows() || a >= b) {
          throw ParseError(line_no, "causal edge [" + std::to_string(a) + ", " + std::to_string(b) +
                                        "] must point forward within the clip");
        }
        s.causal_edges.emplace_back(a, b);
      }
      s.event_ids = record.at("event_ids").get<std::vector<int>>();
      if (s.event_ids.size() != s.frames.rows()) {
        throw ParseError(line_no, "event_ids has " + std::to_string(s.event_ids.size()) + " entries for " +
                                      std::to_string(s.frames.rows()) + " frames");
      }
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

CorpusStats corpus_stats(const std::vector<VideoSample>& samples, const Vocabulary& vocab) {
  CorpusStats stats;
  stats.samples = samples.size();
  stats.vocab_size = vocab.size();
  for (const auto& s : samples) {
    stats.total_tokens += vocab.decode(s.caption).size();
    if (has_nonchain_edge(s)) ++stats.causal_samples;
  }
  if (!samples.empty()) stats.mean_caption_length = static_cast<double>(stats.total_tokens) / static_cast<double>(samples.size());
  return stats;
}

CaptionStructure parse_caption(const std::vector<std::string>& words) {
  CaptionStructure out;
  const auto& index = phrase_index();
  const auto phrase_at = [&](std::size_t i) -> int {
    if (i + 1 >= words.size()) return -1;
    const auto it = index.find({words[i], words[i + 1]});
    return it == index.end() ? -1 : it->second;
  };
  std::size_t i = 0;
  while (i < words.size()) {
    const auto& w = words[i];
    if (w == "then" || w == "so") {
      out.has_causal_connective |= w == "so";
      ++i;
    } else if (w == "because") {
      out.has_causal_connective = true;
      i += phrase_at(i + 1) >= 0 ? 3 : 1;
    } else if (const int type = phrase_at(i); type >= 0) {
      out.events.push_back(type);
      i += 2;
    } else {
      out.events.push_back(-1);
      ++i;
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> event_ordinals(const VideoSample& sample) {
  std::vector<std::size_t> ordinal(sample.event_ids.size());
  for (std::size_t t = 1; t < ordinal.size(); ++t)
    ordinal[t] = ordinal[t - 1] + (sample.event_ids[t] != sample.event_ids[t - 1] ? 1 : 0);
  return ordinal;
}

}  // namespace

bool has_nonchain_edge(const VideoSample& sample) {
  const auto ordinal = event_ordinals(sample);
  return std::any_of(sample.causal_edges.begin(), sample.causal_edges.end(),
                     [&](const CausalEdge& e) { return ordinal.at(e.second) > ordinal.at(e.first) + 1; });
}

std::vector<int> event_order(const VideoSample& sample) {
  std::vector<int> order;
  for (std::size_t t = 0; t < sample.event_ids.size(); ++t)
    if (t == 0 || sample.event_ids[t] != sample.event_ids[t - 1]) order.push_back(sample.event_ids[t]);
  return order;
}

}  // namespace ctrm
