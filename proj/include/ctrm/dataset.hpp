#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctrm/losses.hpp"
#include "ctrm/tensor.hpp"
#include "ctrm/vocabulary.hpp"

namespace ctrm {

using CausalEdge = std::pair<std::size_t, std::size_t>;

struct VideoSample {
  /// [T x d_v] frame features.
  Tensor frames;
  /// <bos> ... <eos>
  std::vector<TokenId> caption;
  /// (cause_frame, effect_frame); both are first frames of their events.
  std::vector<CausalEdge> causal_edges;
  /// Event type of each frame. Types are distinct within a video, so a change
  /// of value marks an event boundary.
  std::vector<int> event_ids;

  std::size_t num_frames() const { return frames.rows(); }
  CausalAnnotation annotation() const { return CausalAnnotation::from_edges(num_frames(), causal_edges); }

  friend bool operator==(const VideoSample&, const VideoSample&) = default;
};

struct IntRange {
  int min = 1;
  int max = 1;
};

struct GeneratorConfig {
  int n_event_types = 8;
  IntRange events_per_video{2, 4};
  IntRange frames_per_event{1, 3};
  std::size_t d_v = 16;
  double feature_noise_sigma = 0.3;
  double causal_edge_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Number of entries in the built-in event name table.
std::size_t event_name_count();
/// Two-word phrase for an event type, e.g. {"ball", "rolls"}.
const std::vector<std::string>& event_phrase(int type);

/// Closed caption vocabulary: reserved tokens, every event word, then the
/// connectives "then", "so" and "because".
const Vocabulary& caption_vocabulary();

/// Synthetic causal-temporal corpus.
///
/// A dataset draws one feature prototype per event type and one relation table
/// R over ordered type pairs (each pair linked with probability
/// causal_edge_prob). Every sample is an ordered chain of distinct event types.
/// Consecutive events are always linked; events i and j > i+1 are linked when
/// R[type_i][type_j] holds, so causal structure is visible from the frames.
///
/// Caption grammar, for events e1..ek:
///   phrase(e1) { ("then" | "so") phrase(ej) ["because" phrase(c)] }
/// where "so" and the "because" clause appear exactly when ej has a non-chain
/// cause, c being the earliest such cause.
std::vector<VideoSample> generate_dataset(const GeneratorConfig& config, std::size_t n_samples);

/// Caption words of the reference (reserved tokens stripped).
std::vector<std::string> caption_words(const VideoSample& sample);

/// One JSON object per line: frames, caption (words), causal_edges, event_ids.
void write_dataset(const std::vector<VideoSample>& samples, const std::filesystem::path& path,
                   const Vocabulary& vocab = caption_vocabulary());
std::vector<VideoSample> read_dataset(const std::filesystem::path& path, const Vocabulary& vocab = caption_vocabulary());

struct CorpusStats {
  std::size_t samples = 0;
  std::size_t vocab_size = 0;
  /// Words per caption, reserved tokens excluded.
  double mean_caption_length = 0.0;
  std::size_t total_tokens = 0;
  std::size_t causal_samples = 0;
};

CorpusStats corpus_stats(const std::vector<VideoSample>& samples, const Vocabulary& vocab = caption_vocabulary());

/// Structure recovered from caption words.
struct CaptionStructure {
  /// Event types of the main clauses in caption order; -1 for an unparseable clause.
  std::vector<int> events;
  bool has_causal_connective = false;
};

CaptionStructure parse_caption(const std::vector<std::string>& words);

/// Whether the annotation links two events that are not consecutive.
bool has_nonchain_edge(const VideoSample& sample);

/// Event type sequence in temporal order.
std::vector<int> event_order(const VideoSample& sample);

}  // namespace ctrm
