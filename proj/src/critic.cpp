// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "dialcot/filters.hpp"

namespace dialcot::filters {

CriticTrainConfig CriticTrainConfig::desk() {
    CriticTrainConfig c;
    c.epochs = 20;
    c.batch_size = 40;
    c.learning_rate = 0.05;
    return c;
}

json CriticTrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"max_tokens", max_tokens},
            {"seed", seed}};
}

CriticTrainConfig CriticTrainConfig::from_json(const json& j) {
    CriticTrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.seed = j.value("seed", c.seed);
    return c;
}

namespace {

constexpr std::uint32_t kDenseFeatures = 4;  // reserved slots for real-valued features

std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80 || c == '\'') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> s{
        "the", "a", "an", "and", "or", "of", "to", "in", "on", "for", "is", "are", "was", "be", "that", "this", "it",
        "with", "as", "at", "by", "what", "why", "how", "does", "do", "did", "might", "person", "subquestion",
        "subanswer", "their", "they", "his", "her", "he", "she", "about", "from", "after", "before", "would", "could",
        "want", "wants", "b", "q1", "q2", "q3", "a1", "a2", "a3"};
    return s;
}

std::uint32_t bucket(std::string_view prefix, std::string_view token) {
    const auto h = fnv1a(token, fnv1a(prefix));
    return kDenseFeatures + static_cast<std::uint32_t>(h % (LinearCritic::kBuckets - kDenseFeatures));
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

std::string LinearCritic::encode_input(const std::string& context_text, const std::string& rationale_text,
                                       int max_tokens) {
    std::string last_line = context_text;
    if (auto nl = last_line.find_last_of('\n'); nl != std::string::npos) last_line = last_line.substr(nl + 1);
    const int keep = std::max(max_tokens - count_whitespace_tokens(rationale_text) - 1,
                              count_whitespace_tokens(last_line));
    return truncate_left(context_text, std::max(keep, 1)) + " </s> " + rationale_text;
}

LinearCritic::Features LinearCritic::featurize(const std::string& context_text,
                                               const std::string& rationale_text) const {
    const std::string encoded = encode_input(context_text, rationale_text, max_tokens_);
    const std::string ctx = encoded.substr(0, encoded.size() - rationale_text.size() - 6);

    std::string earlier, last = ctx;
    if (auto nl = ctx.find_last_of('\n'); nl != std::string::npos) {
        earlier = ctx.substr(0, nl);
        last = ctx.substr(nl + 1);
    }
    const auto earlier_words = words(earlier);
    const auto last_words = words(last);
    const std::set<std::string> earlier_set(earlier_words.begin(), earlier_words.end());
    const std::set<std::string> last_set(last_words.begin(), last_words.end());

    const auto rw = words(rationale_text);
    std::set<std::uint32_t> seen;
    Features f;
    auto add = [&](std::uint32_t idx) {
        if (seen.insert(idx).second) f.emplace_back(idx, 1.0f);
    };
    std::size_t content = 0, in_earlier_only = 0, in_last = 0;
    for (std::size_t i = 0; i < rw.size(); ++i) {
        add(bucket("r1", rw[i]));
        if (i + 1 < rw.size()) add(bucket("r2", rw[i] + ' ' + rw[i + 1]));
        if (stopwords().count(rw[i]) || rw[i].size() < 3) continue;
        ++content;
        const bool e = earlier_set.count(rw[i]) > 0;
        const bool l = last_set.count(rw[i]) > 0;
        if (l) ++in_last;
        if (e && !l) {
            ++in_earlier_only;
            add(bucket("xe", rw[i]));
        }
    }
    const double denom = content ? static_cast<double>(content) : 1.0;
    f.emplace_back(0, static_cast<float>(static_cast<double>(in_earlier_only) / denom));
    f.emplace_back(1, static_cast<float>(static_cast<double>(in_last) / denom));
    f.emplace_back(2, static_cast<float>(static_cast<double>(content - std::min(content, in_earlier_only + in_last)) / denom));
    f.emplace_back(3, earlier.empty() ? 1.0f : 0.0f);
    return f;
}

double LinearCritic::logit(const Features& f) const {
    double z = bias_;
    for (const auto& [idx, v] : f) z += static_cast<double>(weights_[idx]) * v;
    return z;
}

double LinearCritic::probability(const std::string& context_text, const std::string& rationale_text) const {
    if (!trained_) throw PreconditionError("critic model is not trained");
    return sigmoid(logit(featurize(context_text, rationale_text)));
}

double accuracy(const Critic& critic, const std::vector<CriticExample>& examples, double threshold) {
    if (examples.empty()) return std::nan("");
    std::size_t correct = 0;
    for (const auto& e : examples) {
        const bool predicted_aligned = critic.probability(e.context_text, e.rationale_text) >= threshold;
        if (predicted_aligned == (e.label == CriticLabel::aligned)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

LinearCritic train_critic(const CriticDataset& data, const CriticTrainConfig& config) {
    if (data.train.empty()) throw PreconditionError("critic training split is empty");
    if (config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate > 0.0))
        throw PreconditionError("invalid critic training configuration");

    LinearCritic model;
    model.max_tokens_ = config.max_tokens;
    model.weights_.assign(LinearCritic::kBuckets, 0.0f);

    std::vector<LinearCritic::Features> feats;
    std::vector<double> labels;
    feats.reserve(data.train.size());
    for (const auto& e : data.train) {
        feats.push_back(model.featurize(e.context_text, e.rationale_text));
        labels.push_back(e.label == CriticLabel::aligned ? 1.0 : 0.0);
    }

    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> m(LinearCritic::kBuckets, 0.0), v(LinearCritic::kBuckets, 0.0), g(LinearCritic::kBuckets, 0.0);
    double mb = 0.0, vb = 0.0;
    std::vector<std::uint32_t> touched;
    std::int64_t step = 0;
    json losses = json::array();

    std::vector<std::size_t> order(feats.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        stable_shuffle(order, config.seed * 7919ULL + static_cast<std::uint64_t>(epoch));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const double n = static_cast<double>(end - start);
            double gb = 0.0;
            touched.clear();
            for (std::size_t i = start; i < end; ++i) {
                const auto& f = feats[order[i]];
                const double y = labels[order[i]];
                const double p = sigmoid(model.logit(f));
                epoch_loss -= y * std::log(std::max(p, 1e-12)) + (1.0 - y) * std::log(std::max(1.0 - p, 1e-12));
                const double d = (p - y) / n;
                gb += d;
                for (const auto& [idx, val] : f) {
                    if (g[idx] == 0.0) touched.push_back(idx);
                    g[idx] += d * val;
                }
            }
            ++step;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            // Sparse Adam: only coordinates with a gradient in this batch move.
            std::sort(touched.begin(), touched.end());
            touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
            for (auto idx : touched) {
                m[idx] = b1 * m[idx] + (1 - b1) * g[idx];
                v[idx] = b2 * v[idx] + (1 - b2) * g[idx] * g[idx];
                model.weights_[idx] -= static_cast<float>(config.learning_rate * (m[idx] / c1) / (std::sqrt(v[idx] / c2) + eps));
                g[idx] = 0.0;
            }
            mb = b1 * mb + (1 - b1) * gb;
            vb = b2 * vb + (1 - b2) * gb * gb;
            model.bias_ -= static_cast<float>(config.learning_rate * (mb / c1) / (std::sqrt(vb / c2) + eps));
        }
        losses.push_back(epoch_loss / static_cast<double>(feats.size()));
    }
    model.trained_ = true;

    model.metadata_ = {{"model", "hashed-logistic-critic"},
                       {"training", config.to_json()},
                       {"train_examples", data.train.size()},
                       {"loss_history", losses}};
    model.metadata_["train_accuracy"] = accuracy(model, data.train);
    const double val = accuracy(model, data.validation);
    const double test = accuracy(model, data.test);
    model.metadata_["validation_accuracy"] = std::isnan(val) ? json(nullptr) : json(val);
    model.metadata_["test_accuracy"] = std::isnan(test) ? json(nullptr) : json(test);
    spdlog::info("critic trained on {} examples: test accuracy {}", data.train.size(),
                 std::isnan(test) ? std::string("n/a") : std::to_string(test));
    return model;
}

void LinearCritic::save(const std::filesystem::path& path) const {
    if (!trained_) throw PreconditionError("cannot save an untrained critic");
    json w = json::array();
    for (std::size_t i = 0; i < weights_.size(); ++i)
        if (weights_[i] != 0.0f) w.push_back({i, weights_[i]});
    json j{{"format", "dialcot-linear-critic/1"},
           {"metadata", metadata_},
           {"bias", bias_},
           {"max_tokens", max_tokens_},
           {"weights", w}};
    write_file(path, j.dump() + "\n");
}

LinearCritic LinearCritic::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw IoError("critic file " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.value("format", std::string{}) != "dialcot-linear-critic/1")
        throw IoError("critic file " + path.string() + " has an unknown format");
    LinearCritic model;
    model.weights_.assign(kBuckets, 0.0f);
    model.bias_ = j.at("bias").get<float>();
    model.max_tokens_ = j.value("max_tokens", kDefaultMaxInputTokens);
    model.metadata_ = j.value("metadata", json::object());
    for (const auto& e : j.at("weights")) {
        const auto idx = e.at(0).get<std::size_t>();
        if (idx >= kBuckets) throw IoError("critic weight index out of range");
        model.weights_[idx] = e.at(1).get<float>();
    }
    model.trained_ = true;
    return model;
}

}  // namespace dialcot::filters
