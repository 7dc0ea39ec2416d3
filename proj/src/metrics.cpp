// SPDX-License-Identifier: Apache-2.0

#include "dialcot/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

namespace dialcot::metrics {

namespace {

constexpr double kSmoothing = 1e-9;

struct Counts {
    std::array<double, 4> matched{};
    std::array<double, 4> total{};
    double cand_len = 0.0;
    double ref_len = 0.0;
};

Counts pair_counts(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs, int n) {
    Counts c;
    c.cand_len = static_cast<double>(cand.size());
    // Closest reference length, shorter one on ties.
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
        const auto d = [&](std::size_t len) {
            return len > cand.size() ? len - cand.size() : cand.size() - len;
        };
        if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    c.ref_len = static_cast<double>(best);
    for (int i = 1; i <= n; ++i) {
        const auto cc = ngram_counts(cand, i);
        std::map<std::vector<std::string>, int> max_ref;
        for (const auto& r : refs)
            for (const auto& [g, k] : ngram_counts(r, i)) max_ref[g] = std::max(max_ref[g], k);
        double matched = 0.0, total = 0.0;
        for (const auto& [g, k] : cc) {
            total += k;
            if (auto it = max_ref.find(g); it != max_ref.end()) matched += std::min(k, it->second);
        }
        c.matched[static_cast<std::size_t>(i - 1)] = matched;
        c.total[static_cast<std::size_t>(i - 1)] = total;
    }
    return c;
}

double combine(const Counts& c, int n, bool smooth) {
    if (c.cand_len == 0.0) return 0.0;
    double log_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        double p = c.total[idx] > 0.0 ? c.matched[idx] / c.total[idx] : 0.0;
        if (p == 0.0) {
            if (!smooth || i == 0) return 0.0;
            p = kSmoothing;
        }
        log_sum += std::log(p);
    }
    const double bp = c.cand_len > c.ref_len ? 1.0 : std::exp(1.0 - c.ref_len / c.cand_len);
    return std::clamp(bp * std::exp(log_sum / n), 0.0, 1.0);
}

void check_n(int n) {
    if (n < 1 || n > 4) throw PreconditionError("BLEU order must be in [1, 4]");
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::map<std::vector<std::string>, int> out;
    if (n < 1) return out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
        ++out[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                       tokens.begin() + static_cast<long>(i) + n)];
    return out;
}

double bleu_n(std::string_view candidate, std::string_view reference, int n) {
    return bleu_n(candidate, std::vector<std::string>{std::string(reference)}, n);
}

double bleu_n(std::string_view candidate, const std::vector<std::string>& references, int n) {
    check_n(n);
    if (references.empty()) throw PreconditionError("at least one reference is required");
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : references) refs.push_back(tokenize(r));
    return combine(pair_counts(tokenize(candidate), refs, n), n, true);
}

double corpus_bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, int n) {
    check_n(n);
    if (candidates.size() != references.size()) throw PreconditionError("candidate/reference count mismatch");
    Counts sum;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = pair_counts(tokenize(candidates[i]), {tokenize(references[i])}, n);
        for (std::size_t k = 0; k < 4; ++k) {
            sum.matched[k] += c.matched[k];
            sum.total[k] += c.total[k];
        }
        sum.cand_len += c.cand_len;
        sum.ref_len += c.ref_len;
    }
    return combine(sum, n, false);
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::string_view candidate, std::string_view reference) {
    const auto c = tokenize(candidate), r = tokenize(reference);
    if (c.empty() || r.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(c, r));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(c.size());
    const double rec = lcs / static_cast<double>(r.size());
    return 2.0 * p * rec / (p + rec);
}

json EvalReport::to_json() const {
    json ds = json::object();
    for (const auto& [name, s] : datasets)
        ds[name] = {{"bleu1", s.bleu1}, {"bleu2", s.bleu2}, {"bleu4", s.bleu4}, {"rouge_l", s.rouge_l},
                    {"samples", s.samples}};
    return {{"datasets", ds},
            {"mode", mode},
            {"config_hash", config_hash},
            {"bleu_aggregation", "corpus"},
            {"tokenization", "lowercase, punctuation split, whitespace"}};
}

std::string EvalReport::table() const {
    std::string out = "| Dataset | B-1 | B-2 | B-4 | R-L |\n|---|---|---|---|---|\n";
    char buf[256];
    for (const auto& [name, s] : datasets) {
        std::snprintf(buf, sizeof buf, "| %s | %.2f | %.2f | %.2f | %.2f |\n", name.c_str(), s.bleu1 * 100,
                      s.bleu2 * 100, s.bleu4 * 100, s.rouge_l * 100);
        out += buf;
    }
    return out;
}

EvalReport evaluate(const std::vector<corpus::TurnTarget>& targets, const std::vector<std::string>& responses,
                    const std::string& mode, const std::string& config_hash) {
    if (targets.size() != responses.size())
        throw PreconditionError("length mismatch: " + std::to_string(targets.size()) + " targets, " +
                                std::to_string(responses.size()) + " responses");
    if (targets.empty()) throw PreconditionError("nothing to evaluate");
    std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> groups;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        auto& g = groups[targets[i].source.empty() ? "default" : targets[i].source];
        g.first.push_back(responses[i]);
        g.second.push_back(targets[i].response.text);
    }
    EvalReport report;
    report.mode = mode;
    report.config_hash = config_hash;
    for (auto& [name, g] : groups) {
        // Sorting the pairs makes the aggregate independent of input order.
        std::vector<std::pair<std::string, std::string>> pairs;
        for (std::size_t i = 0; i < g.first.size(); ++i) pairs.emplace_back(g.first[i], g.second[i]);
        std::sort(pairs.begin(), pairs.end());
        std::vector<std::string> cands, refs;
        double rl = 0.0;
        for (const auto& [c, r] : pairs) {
            cands.push_back(c);
            refs.push_back(r);
            rl += rouge_l(c, r);
        }
        Scores s;
        s.bleu1 = corpus_bleu(cands, refs, 1);
        s.bleu2 = corpus_bleu(cands, refs, 2);
        s.bleu4 = corpus_bleu(cands, refs, 4);
        s.rouge_l = rl / static_cast<double>(pairs.size());
        s.samples = pairs.size();
        report.datasets[name] = s;
    }
    return report;
}

}  // namespace dialcot::metrics
