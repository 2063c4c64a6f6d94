#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "reghorizon/tensor.hpp"

namespace reghorizon {

// Special token ids shared by data and model.
constexpr int PAD_ID = 0;
constexpr int BOS_ID = 1;
constexpr int EOS_ID = 2;
constexpr int NUM_SPECIALS = 3;

enum class Task { COPY, REVERSE, SHIFT_MAP };

inline std::string task_name(Task t) {
  switch (t) {
    case Task::COPY: return "copy";
    case Task::REVERSE: return "reverse";
    case Task::SHIFT_MAP: return "shift_map";
  }
  return "?";
}

inline Task task_from_name(const std::string& s) {
  if (s == "copy") return Task::COPY;
  if (s == "reverse") return Task::REVERSE;
  if (s == "shift_map") return Task::SHIFT_MAP;
  throw config_error("unknown task: " + s);
}

// One paired example: continuous pseudo-speech frames plus the discrete
// transcript and target token sequences.
struct Triple {
  Tensor speech_frames;             // [T_s, frame_dim]
  std::vector<int> transcript_ids;  // [T_t]
  std::vector<int> target_ids;      // [T_y]
};

struct CorpusSpec {
  int vocab_size = 35;  // includes PAD/BOS/EOS
  int min_len = 3;
  int max_len = 12;
  int size = 2000;
  int frames_per_token = 4;
  int frame_dim = 16;
  double noise_sigma = 0.1;
  Task task = Task::SHIFT_MAP;
  int shift = 1;  // SHIFT_MAP offset
  uint64_t seed = 1;

  int content_vocab() const { return vocab_size - NUM_SPECIALS; }

  void validate() const {
    if (vocab_size <= NUM_SPECIALS)
      throw config_error("corpus vocab too small for PAD/BOS/EOS specials");
    if (min_len < 1 || min_len > max_len) throw config_error("corpus: bad length range");
    if (noise_sigma < 0.0) throw config_error("corpus: noise_sigma must be >= 0");
    if (size < 1 || frames_per_token < 1 || frame_dim < 1)
      throw config_error("corpus: size/frames_per_token/frame_dim must be >= 1");
  }
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Triple> triples;
  std::vector<int> train_idx, dev_idx, test_idx;

  std::vector<Triple> split(const std::vector<int>& idx) const {
    std::vector<Triple> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(triples[static_cast<size_t>(i)]);
    return out;
  }
  std::vector<Triple> train() const { return split(train_idx); }
  std::vector<Triple> dev() const { return split(dev_idx); }
  std::vector<Triple> test() const { return split(test_idx); }
};

inline std::vector<int> apply_task(const CorpusSpec& spec, const std::vector<int>& transcript) {
  int cv = spec.content_vocab();
  std::vector<int> out = transcript;
  switch (spec.task) {
    case Task::COPY:
      break;
    case Task::REVERSE:
      std::reverse(out.begin(), out.end());
      break;
    case Task::SHIFT_MAP:
      for (int& id : out) id = (id - NUM_SPECIALS + spec.shift) % cv + NUM_SPECIALS;
      break;
  }
  return out;
}

// Per-token codebook vector; fixed by the corpus seed alone.
inline std::vector<double> codebook_vector(const CorpusSpec& spec, int token_id) {
  RngStream rng(spec.seed, /*stream=*/0xC0DEB00CULL);
  std::vector<double> v(static_cast<size_t>(spec.frame_dim));
  for (int j = 0; j < spec.frame_dim; ++j)
    v[static_cast<size_t>(j)] = rng.normal(static_cast<uint64_t>(token_id), static_cast<uint64_t>(j));
  return v;
}

inline Corpus generate(const CorpusSpec& spec) {
  spec.validate();
  int cv = spec.content_vocab();
  Corpus corpus;
  corpus.spec = spec;
  RngStream len_rng(spec.seed, 1);
  RngStream tok_rng(spec.seed, 2);
  RngStream noise_rng(spec.seed, 3);
  for (int i = 0; i < spec.size; ++i) {
    uint64_t ui = static_cast<uint64_t>(i);
    int len = spec.min_len +
              static_cast<int>(len_rng.below(ui, 0, static_cast<uint64_t>(spec.max_len - spec.min_len + 1)));
    Triple t;
    t.transcript_ids.resize(static_cast<size_t>(len));
    for (int j = 0; j < len; ++j)
      t.transcript_ids[static_cast<size_t>(j)] =
          NUM_SPECIALS + static_cast<int>(tok_rng.below(ui, static_cast<uint64_t>(j), static_cast<uint64_t>(cv)));
    t.target_ids = apply_task(spec, t.transcript_ids);
    int ts = len * spec.frames_per_token;
    t.speech_frames = Tensor::zeros({ts, spec.frame_dim});
    for (int j = 0; j < len; ++j) {
      auto code = codebook_vector(spec, t.transcript_ids[static_cast<size_t>(j)]);
      for (int r = 0; r < spec.frames_per_token; ++r) {
        int row = j * spec.frames_per_token + r;
        for (int c = 0; c < spec.frame_dim; ++c) {
          double noise = spec.noise_sigma == 0.0
                             ? 0.0
                             : spec.noise_sigma *
                                   noise_rng.normal(ui, static_cast<uint64_t>(row) * spec.frame_dim + c);
          t.speech_frames.at(row, c) = code[static_cast<size_t>(c)] + noise;
        }
      }
    }
    corpus.triples.push_back(std::move(t));
    // deterministic 90/5/5 split by index hash
    uint64_t h = splitmix64(mix_keys(spec.seed, ui)) % 100;
    if (h < 90)
      corpus.train_idx.push_back(i);
    else if (h < 95)
      corpus.dev_idx.push_back(i);
    else
      corpus.test_idx.push_back(i);
  }
  return corpus;
}

// Padded batch with validity masks. target_in is target shifted right with
// BOS; target_out carries the EOS.
struct Batch {
  int batch_size = 0;
  int frame_dim = 0;
  Tensor speech_frames;                          // [B * T_s_max, frame_dim]
  int t_s_max = 0;
  std::vector<std::vector<int>> transcript_ids;  // [B][T_t_max], PAD-padded
  std::vector<std::vector<bool>> transcript_mask;
  std::vector<std::vector<int>> target_in_ids;   // [B][T_y_max + 1]
  std::vector<std::vector<int>> target_out_ids;
  std::vector<std::vector<bool>> target_mask;
  std::vector<int> speech_len;                   // true frame counts

  Tensor speech_item(int b) const {
    Tensor out = Tensor::zeros({speech_len[static_cast<size_t>(b)], frame_dim});
    for (int r = 0; r < speech_len[static_cast<size_t>(b)]; ++r)
      for (int c = 0; c < frame_dim; ++c)
        out.at(r, c) = speech_frames.at(b * t_s_max + r, c);
    return out;
  }
  std::vector<int> transcript_item(int b) const {
    std::vector<int> out;
    for (size_t j = 0; j < transcript_ids[static_cast<size_t>(b)].size(); ++j)
      if (transcript_mask[static_cast<size_t>(b)][j])
        out.push_back(transcript_ids[static_cast<size_t>(b)][j]);
    return out;
  }
  std::vector<int> target_in_item(int b) const {
    std::vector<int> out;
    for (size_t j = 0; j < target_in_ids[static_cast<size_t>(b)].size(); ++j)
      if (target_mask[static_cast<size_t>(b)][j])
        out.push_back(target_in_ids[static_cast<size_t>(b)][j]);
    return out;
  }
  std::vector<int> target_out_item(int b) const {
    std::vector<int> out;
    for (size_t j = 0; j < target_out_ids[static_cast<size_t>(b)].size(); ++j)
      if (target_mask[static_cast<size_t>(b)][j])
        out.push_back(target_out_ids[static_cast<size_t>(b)][j]);
    return out;
  }
};

inline int item_token_cost(const Triple& t) {
  return static_cast<int>(t.transcript_ids.size() + t.target_ids.size()) + 2;
}

// Length-bucketed batching under a padded-token budget: batch cost is
// batch_size * max item cost, kept <= max_tokens.
inline std::vector<Batch> make_batches(const std::vector<Triple>& triples, int max_tokens,
                                       int pad_id = PAD_ID) {
  std::vector<int> order(triples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return item_token_cost(triples[static_cast<size_t>(a)]) <
           item_token_cost(triples[static_cast<size_t>(b)]);
  });
  for (const Triple& t : triples)
    if (item_token_cost(t) > max_tokens)
      throw data_error("make_batches: item exceeds max_tokens budget");

  std::vector<Batch> batches;
  std::vector<int> group;
  int group_max_cost = 0;
  auto flush = [&]() {
    if (group.empty()) return;
    Batch b;
    b.batch_size = static_cast<int>(group.size());
    int tt = 0, ty = 0, ts = 0;
    for (int gi : group) {
      const Triple& t = triples[static_cast<size_t>(gi)];
      tt = std::max(tt, static_cast<int>(t.transcript_ids.size()));
      ty = std::max(ty, static_cast<int>(t.target_ids.size()) + 1);
      ts = std::max(ts, t.speech_frames.rows());
      b.frame_dim = t.speech_frames.cols();
    }
    b.t_s_max = ts;
    b.speech_frames = Tensor::zeros({b.batch_size * ts, b.frame_dim});
    for (size_t k = 0; k < group.size(); ++k) {
      const Triple& t = triples[static_cast<size_t>(group[k])];
      int tsl = t.speech_frames.rows();
      b.speech_len.push_back(tsl);
      for (int r = 0; r < tsl; ++r)
        for (int c = 0; c < b.frame_dim; ++c)
          b.speech_frames.at(static_cast<int>(k) * ts + r, c) = t.speech_frames.at(r, c);
      std::vector<int> tr(static_cast<size_t>(tt), pad_id);
      std::vector<bool> trm(static_cast<size_t>(tt), false);
      for (size_t j = 0; j < t.transcript_ids.size(); ++j) {
        tr[j] = t.transcript_ids[j];
        trm[j] = true;
      }
      b.transcript_ids.push_back(std::move(tr));
      b.transcript_mask.push_back(std::move(trm));
      std::vector<int> tin(static_cast<size_t>(ty), pad_id);
      std::vector<int> tout(static_cast<size_t>(ty), pad_id);
      std::vector<bool> tm(static_cast<size_t>(ty), false);
      tin[0] = BOS_ID;
      tm[0] = true;
      for (size_t j = 0; j < t.target_ids.size(); ++j) {
        tin[j + 1] = t.target_ids[j];
        tout[j] = t.target_ids[j];
        tm[j + 1] = true;
      }
      tout[t.target_ids.size()] = EOS_ID;
      b.target_in_ids.push_back(std::move(tin));
      b.target_out_ids.push_back(std::move(tout));
      b.target_mask.push_back(std::move(tm));
    }
    batches.push_back(std::move(b));
    group.clear();
    group_max_cost = 0;
  };
  for (int idx : order) {
    int cost = item_token_cost(triples[static_cast<size_t>(idx)]);
    int new_max = std::max(group_max_cost, cost);
    if (!group.empty() && static_cast<int>(group.size() + 1) * new_max > max_tokens) flush();
    group.push_back(idx);
    group_max_cost = std::max(group_max_cost, cost);
  }
  flush();
  return batches;
}

inline int batch_token_count(const Batch& b) {
  int tt = b.transcript_ids.empty() ? 0 : static_cast<int>(b.transcript_ids[0].size());
  int ty = b.target_in_ids.empty() ? 0 : static_cast<int>(b.target_in_ids[0].size());
  return b.batch_size * (tt + ty + 1);
}

// --- JSONL export/import ----------------------------------------------------

inline void write_corpus_jsonl(const Corpus& corpus, std::ostream& os) {
  for (const Triple& t : corpus.triples) {
    nlohmann::json j;
    auto& sp = j["speech"] = nlohmann::json::array();
    for (int r = 0; r < t.speech_frames.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < t.speech_frames.cols(); ++c) row.push_back(t.speech_frames.at(r, c));
      sp.push_back(std::move(row));
    }
    j["src"] = t.transcript_ids;
    j["tgt"] = t.target_ids;
    os << j.dump() << "\n";
  }
}

inline std::vector<Triple> read_corpus_jsonl(std::istream& is) {
  std::vector<Triple> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Triple t;
    const auto& sp = j.at("speech");
    int rows = static_cast<int>(sp.size());
    int cols = rows > 0 ? static_cast<int>(sp[0].size()) : 0;
    t.speech_frames = Tensor::zeros({rows, cols});
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) t.speech_frames.at(r, c) = sp[r][c].get<double>();
    t.transcript_ids = j.at("src").get<std::vector<int>>();
    t.target_ids = j.at("tgt").get<std::vector<int>>();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace reghorizon
