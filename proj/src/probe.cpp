#include "xlearner/probe.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <numeric>
#include <set>

#include "xlearner/autograd.hpp"
#include "xlearner/errors.hpp"
#include "xlearner/heads.hpp"
#include "xlearner/schedule.hpp"

namespace xl {

FeatureMatrix extract_features(const FeatureMapFn& model, const SyntheticSource& source, IndexRange range,
                               std::size_t batch_size) {
    FeatureMatrix m;
    m.rows = range.size();
    for (std::size_t begin = range.begin; begin < range.end; begin += batch_size) {
        const std::size_t end = std::min(range.end, begin + batch_size);
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        Batch batch = make_batch(source, idx);
        const Tensor<float> f = model(batch.images);
        if (f.shape().size() != 4 || f.shape()[0] != idx.size())
            throw ShapeError("feature map must be [B, C, h, w] with B = " + std::to_string(idx.size()));
        const std::size_t c = f.shape()[1], hw = f.shape()[2] * f.shape()[3];
        if (m.cols == 0) {
            m.cols = c;
            m.data.reserve(m.rows * c);
        } else if (m.cols != c) {
            throw ShapeError("feature width changed between batches");
        }
        for (std::size_t b = 0; b < idx.size(); ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float* p = f.data() + (b * c + ch) * hw;
                double s = 0;
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
                m.data.push_back(s / static_cast<double>(hw));
            }
            m.labels.push_back(batch.labels[b]);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

struct Objective {
    const FeatureMatrix& x;
    const std::vector<double>& mean;
    const std::vector<double>& inv_std;
    std::size_t classes;
    double lambda;

    // Returns f and writes the gradient. Parameters are [classes x (cols + 1)].
    double operator()(const std::vector<double>& w, std::vector<double>& grad) const {
        const std::size_t d = x.cols + 1;
        std::fill(grad.begin(), grad.end(), 0.0);
        std::vector<double> z(x.cols), logits(classes);
        double loss = 0;
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double* row = x.row(r);
            for (std::size_t j = 0; j < x.cols; ++j) z[j] = (row[j] - mean[j]) * inv_std[j];
            double mx = -INFINITY;
            for (std::size_t k = 0; k < classes; ++k) {
                const double* wk = w.data() + k * d;
                double s = wk[x.cols];
                for (std::size_t j = 0; j < x.cols; ++j) s += wk[j] * z[j];
                logits[k] = s;
                mx = std::max(mx, s);
            }
            double norm = 0;
            for (std::size_t k = 0; k < classes; ++k) norm += std::exp(logits[k] - mx);
            const double lse = mx + std::log(norm);
            loss += lse - logits[static_cast<std::size_t>(x.labels[r])];
            for (std::size_t k = 0; k < classes; ++k) {
                double p = std::exp(logits[k] - lse);
                if (static_cast<std::int32_t>(k) == x.labels[r]) p -= 1.0;
                double* gk = grad.data() + k * d;
                for (std::size_t j = 0; j < x.cols; ++j) gk[j] += p * z[j];
                gk[x.cols] += p;
            }
        }
        const double inv_n = 1.0 / static_cast<double>(x.rows);
        loss *= inv_n;
        for (auto& g : grad) g *= inv_n;
        for (std::size_t k = 0; k < classes; ++k)
            for (std::size_t j = 0; j < x.cols; ++j) {
                const double v = w[k * d + j];
                loss += 0.5 * lambda * v * v;
                grad[k * d + j] += lambda * v;
            }
        return loss;
    }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Limited-memory BFGS with Armijo backtracking.
LbfgsResult lbfgs(const Objective& f, std::vector<double>& w, std::size_t max_iterations, double tolerance) {
    constexpr std::size_t kMemory = 10;
    const std::size_t n = w.size();
    std::vector<double> g(n), g_new(n), dir(n), w_new(n);
    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;
    LbfgsResult res;
    double fx = f(w, g);
    std::vector<double> alpha(kMemory);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        double gmax = 0;
        for (double v : g) gmax = std::max(gmax, std::abs(v));
        if (gmax < tolerance) {
            res.converged = true;
            break;
        }
        // Two-loop recursion.
        dir = g;
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = rho_hist[k] * dot(s_hist[k], dir);
            for (std::size_t i = 0; i < n; ++i) dir[i] -= alpha[k] * y_hist[k][i];
        }
        if (!s_hist.empty()) {
            const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
            for (auto& v : dir) v *= gamma;
        }
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            const double beta = rho_hist[k] * dot(y_hist[k], dir);
            for (std::size_t i = 0; i < n; ++i) dir[i] += s_hist[k][i] * (alpha[k] - beta);
        }
        for (auto& v : dir) v = -v;
        double slope = dot(g, dir);
        if (!(slope < 0)) {
            for (std::size_t i = 0; i < n; ++i) dir[i] = -g[i];
            slope = -dot(g, g);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }
        double step = s_hist.empty() ? std::min(1.0, 1.0 / std::sqrt(-slope)) : 1.0;
        double f_new = 0;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            for (std::size_t i = 0; i < n; ++i) w_new[i] = w[i] + step * dir[i];
            f_new = f(w_new, g_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        res.iterations = it + 1;
        if (!accepted) break;
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = w_new[i] - w[i];
            y[i] = g_new[i] - g[i];
        }
        const double sy = dot(s, y);
        if (sy > 1e-12) {
            if (s_hist.size() == kMemory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
        }
        const double change = fx - f_new;
        w.swap(w_new);
        g.swap(g_new);
        fx = f_new;
        if (change <= tolerance * std::max(1.0, std::abs(fx)) * 1e-3) {
            res.converged = true;
            break;
        }
    }
    res.loss = fx;
    return res;
}

}  // namespace

std::int32_t LogisticModel::predict(const double* x) const {
    const std::size_t d = cols + 1;
    std::int32_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t k = 0; k < classes; ++k) {
        const double* wk = weights.data() + k * d;
        double s = wk[cols];
        for (std::size_t j = 0; j < cols; ++j) s += wk[j] * (x[j] - mean[j]) * inv_std[j];
        if (s > best_score) {
            best_score = s;
            best = static_cast<std::int32_t>(k);
        }
    }
    return best;
}

double LogisticModel::accuracy(const FeatureMatrix& m) const {
    if (m.rows == 0) return 0.0;
    std::size_t ok = 0;
    for (std::size_t r = 0; r < m.rows; ++r) ok += predict(m.row(r)) == m.labels[r];
    return static_cast<double>(ok) / static_cast<double>(m.rows);
}

LogisticModel fit_logistic(const FeatureMatrix& train, std::size_t classes, double lambda, std::size_t max_iterations,
                           double tolerance, LbfgsResult* info) {
    if (train.rows == 0) throw ValidationError("logistic regression needs at least one training row");
    LogisticModel m;
    m.classes = classes;
    m.cols = train.cols;
    m.mean.assign(train.cols, 0.0);
    m.inv_std.assign(train.cols, 0.0);
    for (std::size_t r = 0; r < train.rows; ++r)
        for (std::size_t j = 0; j < train.cols; ++j) m.mean[j] += train.row(r)[j];
    for (auto& v : m.mean) v /= static_cast<double>(train.rows);
    for (std::size_t j = 0; j < train.cols; ++j) {
        double var = 0;
        for (std::size_t r = 0; r < train.rows; ++r) {
            const double d = train.row(r)[j] - m.mean[j];
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(train.rows));
        m.inv_std[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
    m.weights.assign(classes * (train.cols + 1), 0.0);
    Objective f{train, m.mean, m.inv_std, classes, lambda};
    auto r = lbfgs(f, m.weights, max_iterations, tolerance);
    if (info) *info = r;
    return m;
}

namespace {

FeatureMatrix subset(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    FeatureMatrix s;
    s.rows = rows.size();
    s.cols = m.cols;
    s.data.reserve(s.rows * s.cols);
    for (std::size_t r : rows) {
        s.data.insert(s.data.end(), m.row(r), m.row(r) + m.cols);
        s.labels.push_back(m.labels[r]);
    }
    return s;
}

}  // namespace

ProbeResult linear_probe(const FeatureMatrix& train, const FeatureMatrix& test, const ProbeConfig& config,
                         std::uint64_t seed) {
    if (train.cols != test.cols && test.rows > 0) throw ShapeError("train and test feature widths differ");
    std::set<std::int32_t> distinct(train.labels.begin(), train.labels.end());
    if (distinct.size() < 2)
        throw ValidationError("linear probe needs at least two classes, got " + std::to_string(distinct.size()));
    std::size_t classes = 0;
    for (auto l : train.labels) classes = std::max<std::size_t>(classes, static_cast<std::size_t>(l) + 1);
    for (auto l : test.labels) classes = std::max<std::size_t>(classes, static_cast<std::size_t>(l) + 1);

    std::vector<std::size_t> order(train.rows);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "probe-split"));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(config.validation_fraction * static_cast<double>(train.rows))));
    if (n_val >= train.rows) throw ValidationError("too few probe training rows for a validation split");
    const std::span<const std::size_t> all(order);
    const FeatureMatrix val = subset(train, all.first(n_val));
    const FeatureMatrix fit = subset(train, all.subspan(n_val));

    ProbeResult res;
    double best = -1;
    for (double lambda : config.lambda_grid) {
        LbfgsResult info;
        auto m = fit_logistic(fit, classes, lambda, config.max_iterations, config.tolerance, &info);
        const double acc = m.accuracy(val);
        res.validation_accuracy.push_back(acc);
        res.max_iterations_used = std::max(res.max_iterations_used, info.iterations);
        if (acc > best || (acc == best && lambda > res.best_lambda)) {
            best = acc;
            res.best_lambda = lambda;
        }
    }
    LbfgsResult info;
    auto final_model = fit_logistic(train, classes, res.best_lambda, config.max_iterations, config.tolerance, &info);
    res.max_iterations_used = std::max(res.max_iterations_used, info.iterations);
    res.train_accuracy = final_model.accuracy(train);
    res.accuracy = final_model.accuracy(test);
    for (std::size_t r = 0; r < test.rows; ++r) res.test_predictions.push_back(final_model.predict(test.row(r)));
    return res;
}

// ---------------------------------------------------------------------------

TransferReport evaluate_transfer(const FeatureMapFn& model, std::size_t feature_channels, const ProbeConfig& config,
                                 std::uint64_t seed, std::size_t jobs, std::string model_name) {
    if (config.transfer_datasets.empty() && !config.seg_finetune)
        throw ValidationError("evaluation config lists no transfer datasets");
    TransferReport report;
    report.model = std::move(model_name);

    // Feature extraction runs serially; the probes are independent.
    std::vector<std::pair<FeatureMatrix, FeatureMatrix>> features;
    for (const auto& d : config.transfer_datasets) {
        SyntheticSource src(d.name, d.generator, d.train_size + d.test_size, d.seed);
        features.emplace_back(extract_features(model, src, {0, d.train_size}),
                              extract_features(model, src, {d.train_size, d.train_size + d.test_size}));
    }
    std::vector<ProbeResult> results(features.size());
    auto run = [&](std::size_t i) {
        results[i] = linear_probe(features[i].first, features[i].second, config,
                                  derive_seed(seed, "probe:" + config.transfer_datasets[i].name));
    };
    if (jobs <= 1) {
        for (std::size_t i = 0; i < features.size(); ++i) run(i);
    } else {
        for (std::size_t start = 0; start < features.size(); start += jobs) {
            std::vector<std::future<void>> pending;
            for (std::size_t i = start; i < std::min(features.size(), start + jobs); ++i)
                pending.push_back(std::async(std::launch::async, run, i));
            for (auto& p : pending) p.get();
        }
    }
    double sum = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        report.datasets.push_back({config.transfer_datasets[i].name, results[i].accuracy, results[i].train_accuracy,
                                   results[i].best_lambda});
        sum += results[i].accuracy;
    }
    report.avg_cls = results.empty() ? 0.0 : sum / static_cast<double>(results.size());
    if (config.seg_finetune)
        report.seg_miou = seg_finetune_miou(model, feature_channels, *config.seg_finetune, derive_seed(seed, "seg"));
    return report;
}

double seg_finetune_miou(const FeatureMapFn& model, std::size_t feature_channels, const SegFinetuneSpec& spec,
                         std::uint64_t seed) {
    const std::size_t h = spec.generator.height, w = spec.generator.width, classes = spec.generator.num_classes;
    SyntheticSource src("seg-finetune", spec.generator, spec.train_size + spec.test_size, spec.seed);

    auto features_of = [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        Batch b = make_batch(src, idx);
        return std::make_pair(model(b.images), std::move(b.labels));
    };
    // Frozen features of the whole training split, computed once.
    std::vector<Tensor<float>> train_feats;
    std::vector<std::vector<std::int32_t>> train_labels;
    for (std::size_t i = 0; i < spec.train_size; ++i) {
        auto [f, l] = features_of(i, i + 1);
        if (f.shape()[1] != feature_channels) throw ShapeError("seg fine-tune feature width mismatch");
        train_feats.push_back(std::move(f));
        train_labels.push_back(std::move(l));
    }
    const Shape one = train_feats.front().shape();

    Head<float> head(HeadSpec{LossKind::per_pixel_ce, classes}, feature_channels, h, w, derive_seed(seed, "head"));
    nn::ParamList<float> params;
    head.collect(params, "seg_head");
    Sgd<float> opt(0.9, 0.0);
    Rng rng(derive_seed(seed, "batches"));
    for (std::size_t step = 0; step < spec.steps; ++step) {
        Tensor<float> x({spec.batch_size, one[1], one[2], one[3]});
        std::vector<std::int32_t> labels;
        const std::size_t per = one[1] * one[2] * one[3];
        for (std::size_t b = 0; b < spec.batch_size; ++b) {
            const std::size_t i = rng.below(spec.train_size);
            std::copy_n(train_feats[i].data(), per, x.data() + b * per);
            labels.insert(labels.end(), train_labels[i].begin(), train_labels[i].end());
        }
        auto loss = task_loss(LossKind::per_pixel_ce, head.forward(ag::Var<float>(std::move(x))), labels);
        if (!std::isfinite(loss.item())) throw TrainingError("non-finite seg fine-tune loss");
        ag::backward(loss);
        opt.step(params.params, spec.lr);
    }

    std::vector<std::size_t> inter(classes, 0), uni(classes, 0);
    ag::NoGradGuard ng;
    for (std::size_t begin = spec.train_size; begin < spec.train_size + spec.test_size; begin += 16) {
        const std::size_t end = std::min(spec.train_size + spec.test_size, begin + 16);
        auto [f, labels] = features_of(begin, end);
        const Tensor<float> logits = head.forward(ag::Var<float>(std::move(f))).value();
        const std::size_t hw = h * w;
        for (std::size_t b = 0; b < end - begin; ++b)
            for (std::size_t p = 0; p < hw; ++p) {
                std::size_t pred = 0;
                for (std::size_t k = 1; k < classes; ++k)
                    if (logits[(b * classes + k) * hw + p] > logits[(b * classes + pred) * hw + p]) pred = k;
                const auto truth = static_cast<std::size_t>(labels[b * hw + p]);
                if (pred == truth) {
                    ++inter[pred];
                    ++uni[pred];
                } else {
                    ++uni[pred];
                    ++uni[truth];
                }
            }
    }
    double sum = 0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < classes; ++k)
        if (uni[k] > 0) {
            sum += static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
            ++present;
        }
    return present ? sum / static_cast<double>(present) : 0.0;
}

}  // namespace xl
