// SPDX-License-Identifier: Apache-2.0

#include "dialcot/reasoner.hpp"

#include <algorithm>
#include <cctype>

#include <spdlog/spdlog.h>

namespace dialcot::reasoner {

json to_json(const ReasonerExample& e) {
    return {{"input_text", e.input_text}, {"target_text", e.target_text}, {"mode", distill::to_string(e.mode)}};
}

ReasonerExample example_from_json(const json& j) {
    ReasonerExample e;
    e.input_text = j.at("input_text").get<std::string>();
    e.target_text = j.at("target_text").get<std::string>();
    e.mode = distill::corpus_mode_from_string(j.value("mode", std::string("full")));
    if (e.input_text.empty() || e.target_text.empty()) throw SchemaError("training example has empty text");
    return e;
}

std::vector<ReasonerExample> load_training_corpus(const std::filesystem::path& path) {
    std::vector<ReasonerExample> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back(example_from_json(j));
        } catch (const json::exception& e) {
            throw SchemaError(std::string("bad training example: ") + e.what(), line);
        } catch (const SchemaError& e) {
            throw SchemaError(e.what(), line);
        }
    });
    return out;
}

ReasonerExample format_training_example(const distill::AnnotatedTurn& turn, const rationale::Rationale& r,
                                        Mode mode) {
    const bool known = std::any_of(turn.retained_rationales.begin(), turn.retained_rationales.end(),
                                   [&](const auto& x) { return rationale::same_pairs(x, r); });
    if (!known) throw PreconditionError("rationale is not retained for " + turn.target.dialogue_id);
    ReasonerExample e;
    e.input_text = corpus::render_context(turn.target.context);
    e.target_text = mode == Mode::full ? rationale::render_rationale(r) : rationale::render_answers_only(r);
    e.mode = mode;
    return e;
}

bool has_question_line(std::string_view text) {
    for (const auto& line : split_lines(text)) {
        const std::string l = trim(line);
        if (starts_with_ci(l, "subquestion")) return true;
        if (l.size() >= 3 && (l[0] == 'Q' || l[0] == 'q') && std::isdigit(static_cast<unsigned char>(l[1]))) {
            std::size_t i = 1;
            while (i < l.size() && std::isdigit(static_cast<unsigned char>(l[i]))) ++i;
            if (i < l.size() && l[i] == ':') return true;
        }
    }
    return false;
}

json ReasonerHyperparams::to_json() const {
    return {{"base_model", base_model},
            {"learning_rate", learning_rate},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"embed_dim", model.embed_dim},
            {"orders", model.orders},
            {"model_seed", model.seed}};
}

ReasonerHyperparams ReasonerHyperparams::from_json(const json& j) {
    ReasonerHyperparams h;
    h.base_model = j.value("base_model", h.base_model);
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    h.epochs = j.value("epochs", h.epochs);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.seed = j.value("seed", h.seed);
    h.model.embed_dim = j.value("embed_dim", h.model.embed_dim);
    h.model.orders = j.value("orders", h.model.orders);
    h.model.seed = j.value("model_seed", h.model.seed);
    return h;
}

ReasonerHandle::ReasonerHandle(lm::CharLm model, json metadata)
    : model_(std::move(model)), metadata_(std::move(metadata)) {}

const lm::CharLm& ReasonerHandle::model() const {
    if (!model_) throw PreconditionError("reasoner is not trained");
    return *model_;
}

void ReasonerHandle::save(const std::filesystem::path& dir) const {
    if (!model_) throw PreconditionError("cannot save an untrained reasoner");
    std::filesystem::create_directories(dir);
    model_->save(dir / "model.bin");
    write_file(dir / "metadata.json", metadata_.dump(2) + "\n");
}

ReasonerHandle ReasonerHandle::load(const std::filesystem::path& dir) {
    auto model = lm::CharLm::load(dir / "model.bin");
    json meta = json::object();
    if (std::filesystem::exists(dir / "metadata.json")) {
        try {
            meta = json::parse(read_file(dir / "metadata.json"));
        } catch (const json::parse_error& e) {
            throw IoError("reasoner metadata is not valid JSON: " + std::string(e.what()));
        }
    }
    return ReasonerHandle(std::move(model), std::move(meta));
}

std::string training_prefix(const std::string& input_text) { return input_text + std::string(kRationaleSeparator); }

ReasonerHandle train_reasoner(const std::vector<ReasonerExample>& corpus, const ReasonerHyperparams& hp) {
    if (corpus.empty()) throw PreconditionError("training corpus is empty");
    if (hp.epochs < 1 || hp.batch_size < 1 || !(hp.learning_rate > 0.0))
        throw PreconditionError("invalid reasoner hyperparameters");
    const Mode mode = corpus.front().mode;
    for (const auto& e : corpus)
        if (e.mode != mode) throw PreconditionError("training corpus mixes modes");

    std::vector<lm::Sequence> data;
    data.reserve(corpus.size());
    std::string digest_src;
    for (const auto& e : corpus) {
        data.push_back({training_prefix(e.input_text), e.target_text});
        digest_src += to_json(e).dump();
        digest_src += '\n';
    }

    lm::CharLm model(hp.model);
    lm::TrainOptions opts{hp.epochs, hp.learning_rate, hp.batch_size, hp.seed};
    json losses = json::array();
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        const double loss = model.train_epoch(data, opts, epoch);
        losses.push_back(loss);
        spdlog::info("reasoner epoch {}: loss {:.4f}", epoch + 1, loss);
    }
    json meta{{"hyperparameters", hp.to_json()},
              {"mode", distill::to_string(mode)},
              {"examples", corpus.size()},
              {"corpus_sha256", sha256_hex(digest_src)},
              {"loss_history", losses}};
    return ReasonerHandle(std::move(model), std::move(meta));
}

Inference infer_rationale(const ReasonerHandle& handle, const std::vector<corpus::Utterance>& context,
                          const DecodeParams& params) {
    if (!handle.trained()) throw PreconditionError("reasoner is not trained");
    if (context.empty()) throw PreconditionError("context is empty");
    if (params.max_tokens < 1) throw PreconditionError("max_tokens must be positive");
    const std::string prefix = training_prefix(corpus::render_context(context));
    const auto decoded = params.temperature > 0.0
                             ? handle.model().sample(prefix, params.max_tokens, params.temperature, params.seed)
                             : handle.model().greedy_decode(prefix, params.max_tokens);
    Inference out{rationale::parse_rationale(decoded.text), decoded.text, decoded.truncated};
    return out;
}

}  // namespace dialcot::reasoner
