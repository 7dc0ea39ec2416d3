// SPDX-License-Identifier: Apache-2.0
//
// A small byte-level causal language model that trains in seconds on a CPU.
//
// The next-byte distribution is softmax(W * h + b), where h is the sum of
// learned embeddings of hashed suffix n-grams of the prefix (orders 1..64).
// Short orders generalize, long orders let the model memorize. There is no
// recurrent state, so any position can be scored independently.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dialcot::lm {

struct CharLmConfig {
    int embed_dim = 64;
    std::vector<int> orders{1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 24, 32, 48, 64};
    std::uint64_t seed = 17;
};

struct TrainOptions {
    int epochs = 5;
    double learning_rate = 5e-4;
    int batch_size = 8;
    std::uint64_t seed = 0;
};

/// Loss is taken on `target` bytes and the end-of-sequence symbol only.
struct Sequence {
    std::string prefix;
    std::string target;
};

struct Decoded {
    std::string text;
    bool truncated = false;
};

class CharLm {
public:
    static constexpr int kEos = 256;
    static constexpr int kVocab = 257;

    explicit CharLm(CharLmConfig config = {});

    const CharLmConfig& config() const { return config_; }
    std::size_t feature_count() const { return index_.size(); }

    /// Log-probabilities of the next symbol (256 bytes + EOS) after `prefix`.
    std::vector<double> next_logprobs(std::string_view prefix) const;

    /// Sum of log p(continuation[i] | prefix + continuation[..i]). Excludes EOS.
    double continuation_logprob(std::string_view prefix, std::string_view continuation) const;

    /// Runs one pass over `data`. Returns mean per-symbol loss observed during the pass.
    double train_epoch(const std::vector<Sequence>& data, const TrainOptions& options, int epoch_index);

    /// Mean per-symbol cross-entropy over `data` with current weights.
    double evaluate_loss(const std::vector<Sequence>& data) const;

    Decoded greedy_decode(std::string_view prefix, int max_tokens) const;
    Decoded sample(std::string_view prefix, int max_tokens, double temperature, std::uint64_t seed) const;

    void save(const std::filesystem::path& path) const;
    static CharLm load(const std::filesystem::path& path);

private:
    void features(std::string_view seq, std::size_t pos, std::vector<std::uint64_t>& out) const;
    void hidden(const std::vector<std::uint64_t>& feats, std::vector<float>& h) const;
    void logits(const std::vector<float>& h, std::vector<double>& out) const;
    std::uint32_t row_for(std::uint64_t key);
    void adam_step(double lr);

    CharLmConfig config_;
    std::vector<float> out_w_;  // kVocab x embed_dim
    std::vector<float> out_b_;  // kVocab
    std::unordered_map<std::uint64_t, std::uint32_t> index_;
    std::vector<float> rows_;  // feature embeddings, embed_dim each

    // optimizer state
    std::vector<float> m_w_, v_w_, m_b_, v_b_, m_rows_, v_rows_;
    std::vector<float> g_w_, g_b_, g_rows_;
    std::vector<std::uint32_t> touched_;
    std::vector<char> touched_flag_;
    std::int64_t step_ = 0;
};

}  // namespace dialcot::lm
