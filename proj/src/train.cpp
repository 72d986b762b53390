#include "byteveil/train.hpp"

#include "byteveil/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace byteveil {

namespace {

double softplus(double x)
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double bce_from_logit(double logit, Label label)
{
    const double y = label == Label::Malware ? 1.0 : 0.0;
    return softplus(logit) - y * logit;
}

std::vector<ForwardResult> forward_batch(const ModelParams& params,
                                         std::span<const LabeledSample* const> batch)
{
    std::vector<ForwardResult> out(batch.size());
    const auto n = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = forward(params, batch[static_cast<std::size_t>(i)]->x);
    return out;
}

std::vector<double> stack_fc_outputs(const std::vector<ForwardResult>& results, std::size_t width)
{
    std::vector<double> act(results.size() * width);
    for (std::size_t n = 0; n < results.size(); ++n)
        std::copy(results[n].trace.fc_out.begin(), results[n].trace.fc_out.end(),
                  act.begin() + static_cast<std::ptrdiff_t>(n * width));
    return act;
}

double objective_of(const ModelParams& params, std::span<const LabeledSample* const> batch,
                    const std::vector<ForwardResult>& results)
{
    double bce = 0.0;
    for (std::size_t n = 0; n < batch.size(); ++n)
        bce += bce_from_logit(results[n].trace.logit, batch[n]->label);
    bce /= static_cast<double>(batch.size());
    const std::size_t h = params.hyper.hidden;
    const double decov = params.hyper.decov_weight > 0.0
                             ? decov_penalty(stack_fc_outputs(results, h), batch.size(), h)
                             : 0.0;
    return bce + params.hyper.decov_weight * decov;
}

double corpus_objective(const ModelParams& params, std::span<const LabeledSample> corpus,
                        std::size_t batch_size)
{
    double total = 0.0;
    std::size_t batches = 0;
    std::vector<const LabeledSample*> ptrs;
    for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
        ptrs.clear();
        for (std::size_t i = start; i < std::min(corpus.size(), start + batch_size); ++i)
            ptrs.push_back(&corpus[i]);
        total += objective_of(params, ptrs, forward_batch(params, ptrs));
        ++batches;
    }
    return total / static_cast<double>(batches);
}

template <typename Fn>
void for_each_pair(ModelParams& p, ParamGrads& g, Fn&& fn)
{
    fn(p.embedding, g.embedding);
    fn(p.conv_relu_w, g.conv_relu_w);
    fn(p.conv_relu_b, g.conv_relu_b);
    fn(p.conv_sigm_w, g.conv_sigm_w);
    fn(p.conv_sigm_b, g.conv_sigm_b);
    fn(p.fc_w, g.fc_w);
    fn(p.fc_b, g.fc_b);
    fn(p.out_w, g.out_w);
    fn(p.out_b, g.out_b);
}

} // namespace

double batch_objective(const ModelParams& params, std::span<const LabeledSample> batch)
{
    std::vector<const LabeledSample*> ptrs;
    for (const auto& s : batch)
        ptrs.push_back(&s);
    return objective_of(params, ptrs, forward_batch(params, ptrs));
}

ModelParams train(const Hyper& hyper, std::span<const LabeledSample> corpus,
                  const TrainConfig& config, TrainReport* report)
{
    hyper.validate();
    const auto n_mal = std::count_if(corpus.begin(), corpus.end(),
                                     [](const auto& s) { return s.label == Label::Malware; });
    if (n_mal == 0 || static_cast<std::size_t>(n_mal) == corpus.size())
        throw Error(ErrorCode::EmptyClass, "training needs at least one sample of each class");
    for (const auto& s : corpus)
        if (s.x.dim() != hyper.d)
            throw Error(ErrorCode::ShapeMismatch, "training sample dimension differs from d");
    if (config.batch_size == 0 || config.epochs == 0 || !(config.learning_rate > 0.0))
        throw Error(ErrorCode::InvalidConfig, "epochs, batch_size and learning_rate must be positive");

    std::mt19937_64 rng(config.seed);
    ModelParams params = ModelParams::random(hyper, rng());

    TrainReport local;
    local.initial_loss = corpus_objective(params, corpus, config.batch_size);

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<const LabeledSample*> batch;
    const std::size_t h = hyper.hidden;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
                batch.push_back(&corpus[order[i]]);
            const std::size_t bs = batch.size();

            const auto results = forward_batch(params, batch);
            const double loss = objective_of(params, batch, results);
            if (!std::isfinite(loss))
                throw Error(ErrorCode::DivergedLoss,
                            "non-finite loss in epoch " + std::to_string(epoch));
            epoch_total += loss;
            ++n_batches;

            std::vector<double> decov_grad;
            if (hyper.decov_weight > 0.0 && bs > 1) {
                decov_grad = decov_gradient(stack_fc_outputs(results, h), bs, h);
                for (auto& g : decov_grad)
                    g *= hyper.decov_weight;
            }

            ParamGrads grads = ParamGrads::zeros_like(params);
            for (std::size_t n = 0; n < bs; ++n) {
                const double y = batch[n]->label == Label::Malware ? 1.0 : 0.0;
                const double dlogit = (sigmoid(results[n].trace.logit) - y) / static_cast<double>(bs);
                std::span<const double> extra;
                if (!decov_grad.empty())
                    extra = std::span<const double>(decov_grad).subspan(n * h, h);
                accumulate_param_grads(params, results[n].trace, dlogit, extra, grads);
            }

            for_each_pair(params, grads, [&](std::vector<float>& p, const std::vector<double>& g) {
                for (std::size_t i = 0; i < p.size(); ++i)
                    p[i] = static_cast<float>(static_cast<double>(p[i]) - config.learning_rate * g[i]);
            });
        }
        local.epoch_loss.push_back(epoch_total / static_cast<double>(n_batches));
    }

    local.final_loss = corpus_objective(params, corpus, config.batch_size);
    if (!std::isfinite(local.final_loss))
        throw Error(ErrorCode::DivergedLoss, "non-finite loss after training");
    if (report)
        *report = std::move(local);
    return params;
}

} // namespace byteveil
