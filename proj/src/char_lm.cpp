// SPDX-License-Identifier: Apache-2.0

#include "dialcot/char_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dialcot/common.hpp"

namespace dialcot::lm {

namespace {

constexpr std::uint64_t kOrderSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kStartSalt = 0xd6e8feb86659fd93ULL;
constexpr char kMagic[8] = {'D', 'C', 'C', 'H', 'L', 'M', '0', '1'};

double gaussian(std::mt19937_64& rng) {
    // Box-Muller on raw engine output keeps initialization identical across std libraries.
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

void log_softmax(std::vector<double>& x) {
    const double mx = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double v : x) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (double& v : x) v -= lse;
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated model file");
    return v;
}

}  // namespace

CharLm::CharLm(CharLmConfig config) : config_(std::move(config)) {
    if (config_.embed_dim <= 0 || config_.orders.empty()) throw PreconditionError("invalid CharLm config");
    const auto d = static_cast<std::size_t>(config_.embed_dim);
    out_w_.resize(kVocab * d);
    out_b_.assign(kVocab, 0.0f);
    std::mt19937_64 rng(config_.seed);
    for (auto& w : out_w_) w = static_cast<float>(0.02 * gaussian(rng));
}

void CharLm::features(std::string_view seq, std::size_t pos, std::vector<std::uint64_t>& out) const {
    out.clear();
    for (int order : config_.orders) {
        const auto n = static_cast<std::size_t>(order);
        std::uint64_t salt = kOrderSalt * static_cast<std::uint64_t>(order + 1);
        if (pos >= n) {
            out.push_back(fnv1a(seq.substr(pos - n, n), salt));
        } else {
            out.push_back(fnv1a(seq.substr(0, pos), salt ^ kStartSalt));
        }
    }
}

void CharLm::hidden(const std::vector<std::uint64_t>& feats, std::vector<float>& h) const {
    const auto d = static_cast<std::size_t>(config_.embed_dim);
    h.assign(d, 0.0f);
    for (auto key : feats) {
        auto it = index_.find(key);
        if (it == index_.end()) continue;
        const float* row = rows_.data() + static_cast<std::size_t>(it->second) * d;
        for (std::size_t k = 0; k < d; ++k) h[k] += row[k];
    }
}

void CharLm::logits(const std::vector<float>& h, std::vector<double>& out) const {
    const auto d = static_cast<std::size_t>(config_.embed_dim);
    out.resize(kVocab);
    for (std::size_t v = 0; v < kVocab; ++v) {
        const float* w = out_w_.data() + v * d;
        float acc = out_b_[v];
        for (std::size_t k = 0; k < d; ++k) acc += w[k] * h[k];
        out[v] = acc;
    }
}

std::vector<double> CharLm::next_logprobs(std::string_view prefix) const {
    std::vector<std::uint64_t> feats;
    std::vector<float> h;
    std::vector<double> z;
    features(prefix, prefix.size(), feats);
    hidden(feats, h);
    logits(h, z);
    log_softmax(z);
    return z;
}

double CharLm::continuation_logprob(std::string_view prefix, std::string_view continuation) const {
    std::string seq(prefix);
    seq.append(continuation);
    std::vector<std::uint64_t> feats;
    std::vector<float> h;
    std::vector<double> z;
    double total = 0.0;
    for (std::size_t pos = prefix.size(); pos < seq.size(); ++pos) {
        features(seq, pos, feats);
        hidden(feats, h);
        logits(h, z);
        log_softmax(z);
        total += z[static_cast<unsigned char>(seq[pos])];
    }
    return total;
}

std::uint32_t CharLm::row_for(std::uint64_t key) {
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const auto d = static_cast<std::size_t>(config_.embed_dim);
    auto row = static_cast<std::uint32_t>(index_.size());
    index_.emplace(key, row);
    rows_.resize(rows_.size() + d, 0.0f);
    m_rows_.resize(rows_.size(), 0.0f);
    v_rows_.resize(rows_.size(), 0.0f);
    g_rows_.resize(rows_.size(), 0.0f);
    touched_flag_.push_back(0);
    return row;
}

void CharLm::adam_step(double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    auto update = [&](float& p, float& m, float& v, float& g) {
        m = static_cast<float>(b1 * m + (1.0 - b1) * g);
        v = static_cast<float>(b2 * v + (1.0 - b2) * g * g);
        p -= static_cast<float>(lr * (m / c1) / (std::sqrt(v / c2) + eps));
        g = 0.0f;
    };
    for (std::size_t i = 0; i < out_w_.size(); ++i) update(out_w_[i], m_w_[i], v_w_[i], g_w_[i]);
    for (std::size_t i = 0; i < out_b_.size(); ++i) update(out_b_[i], m_b_[i], v_b_[i], g_b_[i]);
    const auto d = static_cast<std::size_t>(config_.embed_dim);
    for (auto row : touched_) {
        const std::size_t base = static_cast<std::size_t>(row) * d;
        for (std::size_t k = 0; k < d; ++k)
            update(rows_[base + k], m_rows_[base + k], v_rows_[base + k], g_rows_[base + k]);
        touched_flag_[row] = 0;
    }
    touched_.clear();
}

double CharLm::train_epoch(const std::vector<Sequence>& data, const TrainOptions& options, int epoch_index) {
    if (data.empty()) throw PreconditionError("training data is empty");
    if (options.batch_size < 1 || options.learning_rate <= 0.0)
        throw PreconditionError("invalid training options");
    const auto d = static_cast<std::size_t>(config_.embed_dim);
    if (m_w_.empty()) {
        m_w_.assign(out_w_.size(), 0.0f);
        v_w_.assign(out_w_.size(), 0.0f);
        g_w_.assign(out_w_.size(), 0.0f);
        m_b_.assign(out_b_.size(), 0.0f);
        v_b_.assign(out_b_.size(), 0.0f);
        g_b_.assign(out_b_.size(), 0.0f);
    }

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    stable_shuffle(order, options.seed * 1000003ULL + static_cast<std::uint64_t>(epoch_index));

    std::vector<std::uint64_t> feats;
    std::vector<std::uint32_t> feat_rows;
    std::vector<float> h(d);
    std::vector<double> z;
    std::vector<float> gh(d);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    std::size_t in_batch = 0;
    std::size_t batch_tokens = 0;
    // Gradients are accumulated unscaled; the 1/N normalization is folded in at step time.
    auto flush = [&]() {
        if (batch_tokens == 0) return;
        const float scale = 1.0f / static_cast<float>(batch_tokens);
        for (auto& g : g_w_) g *= scale;
        for (auto& g : g_b_) g *= scale;
        for (auto row : touched_) {
            float* g = g_rows_.data() + static_cast<std::size_t>(row) * d;
            for (std::size_t k = 0; k < d; ++k) g[k] *= scale;
        }
        adam_step(options.learning_rate);
        in_batch = 0;
        batch_tokens = 0;
    };

    for (std::size_t idx : order) {
        const auto& ex = data[idx];
        std::string seq = ex.prefix + ex.target;
        for (std::size_t pos = ex.prefix.size(); pos <= seq.size(); ++pos) {
            const int y = pos < seq.size() ? static_cast<unsigned char>(seq[pos]) : kEos;
            features(seq, pos, feats);
            feat_rows.clear();
            for (auto key : feats) feat_rows.push_back(row_for(key));
            std::fill(h.begin(), h.end(), 0.0f);
            for (auto row : feat_rows) {
                const float* r = rows_.data() + static_cast<std::size_t>(row) * d;
                for (std::size_t k = 0; k < d; ++k) h[k] += r[k];
            }
            logits(h, z);
            log_softmax(z);
            loss_sum -= z[static_cast<std::size_t>(y)];
            ++loss_count;
            std::fill(gh.begin(), gh.end(), 0.0f);
            for (std::size_t v = 0; v < kVocab; ++v) {
                float dv = static_cast<float>(std::exp(z[v]));
                if (static_cast<int>(v) == y) dv -= 1.0f;
                if (dv == 0.0f) continue;
                g_b_[v] += dv;
                float* gw = g_w_.data() + v * d;
                const float* w = out_w_.data() + v * d;
                for (std::size_t k = 0; k < d; ++k) {
                    gw[k] += dv * h[k];
                    gh[k] += dv * w[k];
                }
            }
            for (auto row : feat_rows) {
                float* g = g_rows_.data() + static_cast<std::size_t>(row) * d;
                for (std::size_t k = 0; k < d; ++k) g[k] += gh[k];
                if (!touched_flag_[row]) {
                    touched_flag_[row] = 1;
                    touched_.push_back(row);
                }
            }
            ++batch_tokens;
        }
        if (++in_batch == static_cast<std::size_t>(options.batch_size)) flush();
    }
    flush();
    return loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
}

double CharLm::evaluate_loss(const std::vector<Sequence>& data) const {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& ex : data) {
        std::string seq = ex.prefix + ex.target;
        for (std::size_t pos = ex.prefix.size(); pos <= seq.size(); ++pos) {
            auto lp = next_logprobs(std::string_view(seq).substr(0, pos));
            const int y = pos < seq.size() ? static_cast<unsigned char>(seq[pos]) : kEos;
            total -= lp[static_cast<std::size_t>(y)];
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

Decoded CharLm::greedy_decode(std::string_view prefix, int max_tokens) const {
    std::string seq(prefix);
    Decoded out;
    for (int i = 0; i < max_tokens; ++i) {
        auto lp = next_logprobs(seq);
        auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
        if (best == kEos) return out;
        out.text.push_back(static_cast<char>(best));
        seq.push_back(static_cast<char>(best));
    }
    out.truncated = true;
    return out;
}

Decoded CharLm::sample(std::string_view prefix, int max_tokens, double temperature, std::uint64_t seed) const {
    if (temperature <= 0.0) return greedy_decode(prefix, max_tokens);
    std::mt19937_64 rng(seed);
    std::string seq(prefix);
    Decoded out;
    std::vector<double> p(kVocab);
    for (int i = 0; i < max_tokens; ++i) {
        auto lp = next_logprobs(seq);
        const double mx = *std::max_element(lp.begin(), lp.end());
        double sum = 0.0;
        for (std::size_t v = 0; v < kVocab; ++v) sum += p[v] = std::exp((lp[v] - mx) / temperature);
        double r = static_cast<double>(rng() >> 11) * 0x1.0p-53 * sum;
        int pick = kEos;
        for (std::size_t v = 0; v < kVocab; ++v) {
            r -= p[v];
            if (r < 0.0) {
                pick = static_cast<int>(v);
                break;
            }
        }
        if (pick == kEos) return out;
        out.text.push_back(static_cast<char>(pick));
        seq.push_back(static_cast<char>(pick));
    }
    out.truncated = true;
    return out;
}

void CharLm::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, static_cast<std::int32_t>(config_.embed_dim));
    write_pod(out, static_cast<std::uint64_t>(config_.seed));
    write_pod(out, static_cast<std::uint32_t>(config_.orders.size()));
    for (int o : config_.orders) write_pod(out, static_cast<std::int32_t>(o));
    out.write(reinterpret_cast<const char*>(out_w_.data()), static_cast<std::streamsize>(out_w_.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(out_b_.data()), static_cast<std::streamsize>(out_b_.size() * sizeof(float)));
    // Rows are written in index order so reloading reproduces the same layout.
    std::vector<std::uint64_t> keys(index_.size());
    for (const auto& [key, row] : index_) keys[row] = key;
    write_pod(out, static_cast<std::uint64_t>(keys.size()));
    for (auto k : keys) write_pod(out, k);
    out.write(reinterpret_cast<const char*>(rows_.data()), static_cast<std::streamsize>(rows_.size() * sizeof(float)));
    if (!out) throw IoError("write failed for " + path.string());
}

CharLm CharLm::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(magic, magic + sizeof(magic), kMagic)) throw IoError("not a model file: " + path.string());
    CharLmConfig cfg;
    cfg.embed_dim = read_pod<std::int32_t>(in);
    cfg.seed = read_pod<std::uint64_t>(in);
    auto n_orders = read_pod<std::uint32_t>(in);
    cfg.orders.clear();
    for (std::uint32_t i = 0; i < n_orders; ++i) cfg.orders.push_back(read_pod<std::int32_t>(in));
    CharLm model(cfg);
    in.read(reinterpret_cast<char*>(model.out_w_.data()), static_cast<std::streamsize>(model.out_w_.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(model.out_b_.data()), static_cast<std::streamsize>(model.out_b_.size() * sizeof(float)));
    auto n_rows = read_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_rows; ++i) model.index_.emplace(read_pod<std::uint64_t>(in), static_cast<std::uint32_t>(i));
    model.rows_.resize(n_rows * static_cast<std::size_t>(cfg.embed_dim));
    in.read(reinterpret_cast<char*>(model.rows_.data()), static_cast<std::streamsize>(model.rows_.size() * sizeof(float)));
    if (!in) throw IoError("truncated model file: " + path.string());
    model.touched_flag_.assign(n_rows, 0);
    model.m_rows_.assign(model.rows_.size(), 0.0f);
    model.v_rows_.assign(model.rows_.size(), 0.0f);
    model.g_rows_.assign(model.rows_.size(), 0.0f);
    return model;
}

}  // namespace dialcot::lm
