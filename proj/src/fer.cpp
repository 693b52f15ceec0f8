#include "mic/fer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>

namespace mic::fer {

namespace {

struct ConvShape {
    std::size_t oh1, ow1, oh2, ow2, flat;
};

ConvShape conv_shape(std::size_t h, std::size_t w) {
    ConvShape s;
    s.oh1 = (h - 3) / 2 + 1;
    s.ow1 = (w - 3) / 2 + 1;
    s.oh2 = (s.oh1 - 3) / 2 + 1;
    s.ow2 = (s.ow1 - 3) / 2 + 1;
    s.flat = 32 * s.oh2 * s.ow2;
    return s;
}

// shared conv trunk used by both encoders
Tensor trunk_forward(Graph& g, nn::ParamStore& ps, const std::string& prefix, Tensor x,
                     const ConvShape& cs, Tensor* fc_out_bias_holder = nullptr) {
    (void)fc_out_bias_holder;
    auto conv1 = nn::Conv::attach(ps, prefix + ".conv1", 2);
    auto conv2 = nn::Conv::attach(ps, prefix + ".conv2", 2);
    auto fc = nn::Linear::attach(ps, prefix + ".fc");
    const std::size_t n = x.shape[0];
    Tensor y = relu(g, conv1.forward(g, std::move(x)));
    y = relu(g, conv2.forward(g, y));
    y = reshape(g, y, {n, cs.flat});
    return fc.forward(g, y);
}

void create_trunk(nn::ParamStore& ps, const std::string& prefix, std::size_t in_channels,
                  std::size_t out_dim, const ConvShape& cs, Rng& rng) {
    nn::Conv::create(ps, prefix + ".conv1", in_channels, 16, 3, 2, rng);
    nn::Conv::create(ps, prefix + ".conv2", 16, 32, 3, 2, rng);
    nn::Linear::create(ps, prefix + ".fc", cs.flat, out_dim, rng);
}

Tensor tnet_forward(Graph& g, nn::ParamStore& ps, Tensor pairs) {
    const std::size_t n = pairs.shape[0];
    auto fc1 = nn::Linear::attach(ps, "t.fc1");
    auto fc2 = nn::Linear::attach(ps, "t.fc2");
    auto fc3 = nn::Linear::attach(ps, "t.fc3");
    Tensor h = relu(g, fc1.forward(g, std::move(pairs)));
    h = relu(g, fc2.forward(g, h));
    return reshape(g, fc3.forward(g, h), {n});
}

}  // namespace

ModelBundle ModelBundle::init(const ModelDims& dims, std::uint64_t seed) {
    ModelBundle b;
    b.dims = dims;
    const ConvShape cs = conv_shape(dims.h, dims.w);
    Rng rng(seed ^ 0x6d69636dull);
    create_trunk(b.fer, "f_e", dims.input_channels(), dims.d_e, cs, rng);
    nn::Lstm::create(b.fer, "lstm", dims.d_e, dims.d_e, rng);
    nn::Linear::create(b.fer, "cls", dims.d_e, dims.n_classes, rng);
    nn::Linear::create(b.dec, "dec.fc1", dims.d_e + dims.d_i, dims.dec_hidden, rng);
    nn::Linear::create(b.dec, "dec.fc2", dims.dec_hidden, dims.h * dims.w * dims.c, rng);
    create_trunk(b.fi, "fi", dims.c, dims.d_i, cs, rng);
    nn::Linear::create(b.tnet, "t.fc1", dims.d_e + dims.d_i, dims.t_hidden, rng);
    nn::Linear::create(b.tnet, "t.fc2", dims.t_hidden, dims.t_hidden, rng);
    nn::Linear::create(b.tnet, "t.fc3", dims.t_hidden, 1, rng);
    return b;
}

Tensor ModelBundle::encode_frames(Graph& g, Tensor frames) {
    return trunk_forward(g, fer, "f_e", std::move(frames), conv_shape(dims.h, dims.w));
}

Tensor ModelBundle::aggregate(Graph& g, const std::vector<Tensor>& feats_by_time) {
    auto lstm = nn::Lstm::attach(fer, "lstm", dims.d_e);
    return lstm.forward(g, feats_by_time);
}

Tensor ModelBundle::classify(Graph& g, Tensor z_e) {
    return nn::Linear::attach(fer, "cls").forward(g, std::move(z_e));
}

Tensor ModelBundle::identity_embed(Graph& g, Tensor i_frames) {
    return trunk_forward(g, fi, "fi", std::move(i_frames), conv_shape(dims.h, dims.w));
}

Tensor ModelBundle::decode_apex(Graph& g, Tensor z_e, Tensor z_i) {
    Tensor joint = concat(g, {std::move(z_e), std::move(z_i)}, 1);
    Tensor h = relu(g, nn::Linear::attach(dec, "dec.fc1").forward(g, joint));
    return sigmoid(g, nn::Linear::attach(dec, "dec.fc2").forward(g, h));
}

std::vector<std::vector<double>> ModelBundle::snapshot() const {
    std::vector<std::vector<double>> snap;
    for (const auto* ps : {&fer, &dec, &fi, &tnet})
        for (const auto& name : ps->names()) snap.push_back(*ps->get(name).data);
    return snap;
}

void ModelBundle::restore(const std::vector<std::vector<double>>& snap) {
    std::size_t i = 0;
    for (auto* ps : {&fer, &dec, &fi, &tnet})
        for (const auto& name : ps->names()) *ps->get(name).data = snap.at(i++);
}

double beta_at(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.beta_epochs == 0) return 0.0;
    return std::max(0.0, 1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.beta_epochs));
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
    return epoch >= cfg.lr_drop_epoch ? cfg.lr * cfg.lr_drop_factor : cfg.lr;
}

std::vector<SequenceData> load_sequences(const std::vector<synth::ManifestEntry>& entries,
                                         const std::string& base_dir, bool with_motion) {
    namespace fs = std::filesystem;
    std::vector<SequenceData> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        const std::string path = (fs::path(base_dir) / e.path).string();
        SequenceData sd;
        try {
            sd.gop = gop::parse_gop_file(path);
        } catch (const gop::CodecError& err) {
            throw FerError("load_sequences: " + path + ": " + err.what());
        }
        sd.label = e.expression_label;
        sd.identity = e.identity_label;
        sd.apex_idx = e.apex_idx;
        const std::size_t t_steps = sd.gop.p_frames.size();
        if (t_steps == 0) throw FerError("load_sequences: " + path + " has no P frames");
        Tensor first = gop::residual_input(sd.gop, 1, with_motion);
        const std::size_t per = first.size();
        sd.residuals = Tensor::zeros({t_steps, first.shape[0], first.shape[1], first.shape[2]});
        std::copy_n(first.data->data(), per, sd.residuals.data->data());
        for (std::size_t t = 2; t <= t_steps; ++t) {
            Tensor r = gop::residual_input(sd.gop, t, with_motion);
            std::copy_n(r.data->data(), per, sd.residuals.data->data() + (t - 1) * per);
        }
        const gop::RawFrame apex = gop::accumulate_to_apex(sd.gop, sd.apex_idx);
        sd.apex_target = Tensor::zeros({apex.size()});
        for (std::size_t i = 0; i < apex.size(); ++i)
            (*sd.apex_target.data)[i] = apex.pixels[i] / 255.0;
        out.push_back(std::move(sd));
    }
    return out;
}

Tensor compute_identity_embeddings(ModelBundle& bundle, const std::vector<SequenceData>& data) {
    const auto& d = bundle.dims;
    const std::size_t n = data.size(), per = d.c * d.h * d.w;
    Tensor out = Tensor::zeros({n, d.d_i});
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t m = std::min(chunk, n - start);
        Tensor imgs = Tensor::zeros({m, d.c, d.h, d.w});
        for (std::size_t i = 0; i < m; ++i) {
            const auto& f = data[start + i].gop.i_frame;
            // channel-planar layout from interleaved pixels
            for (std::size_t p = 0; p < d.h * d.w; ++p)
                for (std::size_t ch = 0; ch < d.c; ++ch)
                    (*imgs.data)[i * per + ch * d.h * d.w + p] = f.pixels[p * d.c + ch] / 255.0;
        }
        Graph g;
        Tensor z = bundle.identity_embed(g, imgs);
        std::copy_n(z.data->data(), m * d.d_i, out.data->data() + start * d.d_i);
    }
    return out;
}

std::pair<Tensor, Tensor> forward_expression(ModelBundle& bundle, const gop::Gop& g_in) {
    if (g_in.p_frames.empty())
        throw FerError("forward_expression: gop has no P frames (no residuals)");
    const auto& d = bundle.dims;
    const std::size_t t_steps = g_in.p_frames.size();
    const std::size_t cin = d.input_channels();
    Tensor frames = Tensor::zeros({t_steps, cin, d.h, d.w});
    for (std::size_t t = 1; t <= t_steps; ++t) {
        Tensor r = gop::residual_input(g_in, t, d.with_motion);
        std::copy_n(r.data->data(), r.size(), frames.data->data() + (t - 1) * r.size());
    }
    Graph g;
    Tensor feats = bundle.encode_frames(g, frames);  // (T, d_e)
    std::vector<Tensor> xs;
    for (std::size_t t = 0; t < t_steps; ++t) xs.push_back(slice(g, feats, 0, t, 1));
    Tensor z_e = bundle.aggregate(g, xs);
    Tensor probs = softmax(g, bundle.classify(g, z_e));
    return {z_e, probs};
}

Tensor loss_cross_entropy(Graph& g, Tensor probabilities, const std::vector<int>& labels) {
    if (probabilities.shape.size() != 2 || probabilities.shape[0] != labels.size())
        throw FerError("loss_cross_entropy: probabilities must be (batch, classes)");
    const std::size_t c = probabilities.shape[1];
    Tensor onehot = Tensor::zeros(probabilities.shape);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw FerError("loss_cross_entropy: label out of range");
        (*onehot.data)[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    Tensor p_y = sum_axis(g, multiply(g, std::move(probabilities), onehot), 1);
    Tensor floored = add(g, p_y, Tensor::full({labels.size()}, 1e-12));
    return scale(g, mean_all(g, log_op(g, floored)), -1.0);
}

Tensor loss_reconstruction(Graph& g, Tensor decoded, Tensor apex_target) {
    if (decoded.size() != apex_target.size())
        throw FerError("loss_reconstruction: decoded/apex size mismatch");
    Tensor target = reshape(g, std::move(apex_target), decoded.shape);
    Tensor diff = subtract(g, std::move(decoded), target);
    return scale(g, sqnorm(g, diff), 1.0 / static_cast<double>(diff.size()));
}

namespace {

std::size_t argmax_row(const Tensor& probs, std::size_t row) {
    const std::size_t c = probs.shape[1];
    const double* p = probs.data->data() + row * c;
    return static_cast<std::size_t>(std::max_element(p, p + c) - p);
}

void check_finite(double v, const char* loss_name) {
    if (!std::isfinite(v))
        throw FerError(std::string("non-finite value in ") + loss_name);
}

}  // namespace

SplitForward forward_split(ModelBundle& bundle, const std::vector<SequenceData>& data,
                           std::size_t batch) {
    const auto& d = bundle.dims;
    SplitForward out;
    out.z_e = Tensor::zeros({data.size(), d.d_e});
    out.predictions.resize(data.size());
    for (std::size_t start = 0; start < data.size(); start += batch) {
        const std::size_t bsz = std::min(batch, data.size() - start);
        const std::size_t t_steps = data[start].residuals.shape[0];
        const std::size_t per = data[start].residuals.size() / t_steps;
        Tensor frames = Tensor::zeros({bsz * t_steps, d.input_channels(), d.h, d.w});
        for (std::size_t b = 0; b < bsz; ++b) {
            if (data[start + b].residuals.shape[0] != t_steps)
                throw FerError("forward_split: mixed sequence lengths");
            for (std::size_t t = 0; t < t_steps; ++t)
                std::copy_n(data[start + b].residuals.data->data() + t * per, per,
                            frames.data->data() + (t * bsz + b) * per);
        }
        Graph g;
        Tensor feats = bundle.encode_frames(g, frames);
        std::vector<Tensor> xs;
        for (std::size_t t = 0; t < t_steps; ++t)
            xs.push_back(slice(g, feats, 0, t * bsz, bsz));
        Tensor z_e = bundle.aggregate(g, xs);
        Tensor probs = softmax(g, bundle.classify(g, z_e));
        std::copy_n(z_e.data->data(), bsz * d.d_e, out.z_e.data->data() + start * d.d_e);
        for (std::size_t b = 0; b < bsz; ++b)
            out.predictions[start + b] = argmax_row(probs, b);
    }
    return out;
}

LossBreakdown train_step(ModelBundle& bundle, const std::vector<SequenceData>& data,
                         const std::vector<std::size_t>& batch_idx, const Tensor& z_i_all,
                         const TrainConfig& cfg, double beta, double lr,
                         mine::EmaState& ema, Rng& rng) {
    const std::size_t bsz = batch_idx.size();
    if (bsz < 2) throw FerError("train_step: batch size must be >= 2");
    const auto& d = bundle.dims;
    const std::size_t t_steps = data[batch_idx[0]].residuals.shape[0];
    const std::size_t per = data[batch_idx[0]].residuals.size() / t_steps;
    const std::size_t cin = d.input_channels();

    // t-major frame stack: row t*bsz + b holds frame t+1 of sequence b
    Tensor frames = Tensor::zeros({bsz * t_steps, cin, d.h, d.w});
    Tensor z_i = Tensor::zeros({bsz, d.d_i});
    Tensor apex = Tensor::zeros({bsz, d.h * d.w * d.c});
    std::vector<int> labels(bsz);
    for (std::size_t b = 0; b < bsz; ++b) {
        const SequenceData& sd = data[batch_idx[b]];
        if (sd.residuals.shape[0] != t_steps)
            throw FerError("train_step: mixed sequence lengths in batch");
        for (std::size_t t = 0; t < t_steps; ++t)
            std::copy_n(sd.residuals.data->data() + t * per, per,
                        frames.data->data() + (t * bsz + b) * per);
        std::copy_n(z_i_all.data->data() + batch_idx[b] * d.d_i, d.d_i,
                    z_i.data->data() + b * d.d_i);
        std::copy_n(sd.apex_target.data->data(), sd.apex_target.size(),
                    apex.data->data() + b * sd.apex_target.size());
        labels[b] = sd.label;
    }

    Graph g;
    Tensor feats = bundle.encode_frames(g, frames);
    std::vector<Tensor> xs;
    xs.reserve(t_steps);
    for (std::size_t t = 0; t < t_steps; ++t) xs.push_back(slice(g, feats, 0, t * bsz, bsz));
    Tensor z_e = bundle.aggregate(g, xs);
    Tensor probs = softmax(g, bundle.classify(g, z_e));
    Tensor ce = loss_cross_entropy(g, probs, labels);
    check_finite(ce.item(), "loss_ce");

    LossBreakdown out;
    out.ce = ce.item();
    out.count = bsz;
    for (std::size_t b = 0; b < bsz; ++b)
        if (argmax_row(probs, b) == static_cast<std::size_t>(labels[b])) ++out.correct;

    Tensor total = ce;
    if (!cfg.disable_mi) {
        // gradient-reversal-style gate: z_E receives +alpha * dMI/dz_E while
        // the statistics net descends -MI (i.e. ascends the DV bound)
        const auto pi = mine::marginal_pairing(bsz, rng);
        Tensor z_e_gate = grad_scale(g, z_e, -cfg.alpha);
        Tensor t_joint = tnet_forward(g, bundle.tnet, concat(g, {z_e_gate, z_i}, 1));
        Tensor t_marg = tnet_forward(
            g, bundle.tnet, concat(g, {z_e_gate, permute_rows(g, z_i, pi)}, 1));
        for (double v : *t_marg.data) check_finite(v, "mi_hat (statistics net)");
        ema.update(mine::mean_exp_shifted(*t_marg.data));
        Tensor mi = subtract(g, mean_all(g, t_joint),
                             mine::log_mean_exp_ema(g, t_marg, ema.ema));
        check_finite(mi.item(), "mi_hat");
        out.mi = mi.item();
        total = subtract(g, total, mi);
    }
    if (!cfg.disable_recon) {
        Tensor z_e_rec = grad_scale(g, z_e, beta);
        Tensor recon = bundle.decode_apex(g, z_e_rec, z_i);
        Tensor l1 = loss_reconstruction(g, recon, apex);
        check_finite(l1.item(), "loss_recon");
        out.recon = l1.item();
        total = add(g, total, l1);
    }

    bundle.fer.zero_grads();
    bundle.dec.zero_grads();
    bundle.tnet.zero_grads();
    g.backward(total);
    bundle.fer.adam_step(lr);
    if (!cfg.disable_recon) bundle.dec.adam_step(lr);
    if (!cfg.disable_mi) bundle.tnet.adam_step(lr);
    return out;
}

namespace {

// forward-only batch prediction accuracy
double eval_accuracy(ModelBundle& bundle, const std::vector<SequenceData>& data,
                     std::size_t batch) {
    if (data.empty()) return 0.0;
    const auto& d = bundle.dims;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += batch) {
        const std::size_t bsz = std::min(batch, data.size() - start);
        const std::size_t t_steps = data[start].residuals.shape[0];
        const std::size_t per = data[start].residuals.size() / t_steps;
        Tensor frames = Tensor::zeros({bsz * t_steps, d.input_channels(), d.h, d.w});
        for (std::size_t b = 0; b < bsz; ++b)
            for (std::size_t t = 0; t < t_steps; ++t)
                std::copy_n(data[start + b].residuals.data->data() + t * per, per,
                            frames.data->data() + (t * bsz + b) * per);
        Graph g;
        Tensor feats = bundle.encode_frames(g, frames);
        std::vector<Tensor> xs;
        for (std::size_t t = 0; t < t_steps; ++t)
            xs.push_back(slice(g, feats, 0, t * bsz, bsz));
        Tensor probs = softmax(g, bundle.classify(g, bundle.aggregate(g, xs)));
        for (std::size_t b = 0; b < bsz; ++b)
            if (argmax_row(probs, b) == static_cast<std::size_t>(data[start + b].label))
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

void write_metrics_line(std::ostream* csv, const EpochMetrics& m) {
    if (!csv) return;
    *csv << m.epoch << ',' << m.loss_ce << ',' << m.mi_hat << ',' << m.loss_recon << ','
         << m.train_acc << ',' << m.val_acc << '\n';
}

}  // namespace

FitResult fit(ModelBundle& bundle, const TrainConfig& cfg,
              const std::vector<SequenceData>& train_data,
              const std::vector<SequenceData>& val_data, std::ostream* metrics_csv) {
    if (train_data.empty()) throw FerError("fit: empty training set");
    Rng rng(cfg.seed);
    Tensor z_i_all = compute_identity_embeddings(bundle, train_data);
    mine::EmaState ema;
    ema.rate = cfg.ema_rate;
    const std::uint64_t fi_before = bundle.fi.checksum();

    if (metrics_csv) *metrics_csv << "epoch,loss_ce,mi_hat,loss_recon,train_acc,val_acc\n";
    FitResult res;
    std::vector<std::vector<double>> best;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double beta = beta_at(cfg, epoch);
        const double lr = lr_at(cfg, epoch);
        auto perm = rng.permutation(train_data.size());
        EpochMetrics m;
        m.epoch = epoch;
        std::size_t steps = 0, correct = 0, seen = 0;
        for (std::size_t start = 0; start + 2 <= perm.size(); start += cfg.batch) {
            const std::size_t bsz = std::min(cfg.batch, perm.size() - start);
            if (bsz < 2) break;
            std::vector<std::size_t> idx(perm.begin() + start, perm.begin() + start + bsz);
            LossBreakdown lb;
            try {
                lb = train_step(bundle, train_data, idx, z_i_all, cfg, beta, lr, ema, rng);
            } catch (const FerError& e) {
                throw FerError("fit: epoch " + std::to_string(epoch) + " step " +
                               std::to_string(steps) + ": " + e.what());
            }
            m.loss_ce += lb.ce;
            m.mi_hat += lb.mi;
            m.loss_recon += lb.recon;
            correct += lb.correct;
            seen += lb.count;
            ++steps;
        }
        m.loss_ce /= steps;
        m.mi_hat /= steps;
        m.loss_recon /= steps;
        m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        m.val_acc = eval_accuracy(bundle, val_data, cfg.batch);
        write_metrics_line(metrics_csv, m);
        res.log.push_back(m);
        if (best.empty() || m.val_acc > res.best_val_acc) {
            res.best_val_acc = m.val_acc;
            res.best_epoch = epoch;
            best = bundle.snapshot();
        }
    }
    if (!best.empty()) bundle.restore(best);
    if (bundle.fi.checksum() != fi_before)
        throw FerError("fit: frozen identity encoder changed during training");
    return res;
}

FitResult fit_plain_ce(ModelBundle& bundle, const TrainConfig& cfg,
                       const std::vector<SequenceData>& train_data,
                       const std::vector<SequenceData>& val_data, std::ostream* metrics_csv) {
    if (train_data.empty()) throw FerError("fit_plain_ce: empty training set");
    Rng rng(cfg.seed);
    const auto& d = bundle.dims;

    if (metrics_csv) *metrics_csv << "epoch,loss_ce,mi_hat,loss_recon,train_acc,val_acc\n";
    FitResult res;
    std::vector<std::vector<double>> best;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        auto perm = rng.permutation(train_data.size());
        EpochMetrics m;
        m.epoch = epoch;
        std::size_t steps = 0, correct = 0, seen = 0;
        for (std::size_t start = 0; start + 2 <= perm.size(); start += cfg.batch) {
            const std::size_t bsz = std::min(cfg.batch, perm.size() - start);
            if (bsz < 2) break;
            const std::size_t t_steps = train_data[perm[start]].residuals.shape[0];
            const std::size_t per = train_data[perm[start]].residuals.size() / t_steps;
            Tensor frames = Tensor::zeros({bsz * t_steps, d.input_channels(), d.h, d.w});
            std::vector<int> labels(bsz);
            for (std::size_t b = 0; b < bsz; ++b) {
                const auto& sd = train_data[perm[start + b]];
                for (std::size_t t = 0; t < t_steps; ++t)
                    std::copy_n(sd.residuals.data->data() + t * per, per,
                                frames.data->data() + (t * bsz + b) * per);
                labels[b] = sd.label;
            }
            Graph g;
            Tensor feats = bundle.encode_frames(g, frames);
            std::vector<Tensor> xs;
            for (std::size_t t = 0; t < t_steps; ++t)
                xs.push_back(slice(g, feats, 0, t * bsz, bsz));
            Tensor probs = softmax(g, bundle.classify(g, bundle.aggregate(g, xs)));
            Tensor ce = loss_cross_entropy(g, probs, labels);
            bundle.fer.zero_grads();
            g.backward(ce);
            bundle.fer.adam_step(lr);
            m.loss_ce += ce.item();
            for (std::size_t b = 0; b < bsz; ++b)
                if (argmax_row(probs, b) == static_cast<std::size_t>(labels[b])) ++correct;
            seen += bsz;
            ++steps;
        }
        m.loss_ce /= steps;
        m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        m.val_acc = eval_accuracy(bundle, val_data, cfg.batch);
        write_metrics_line(metrics_csv, m);
        res.log.push_back(m);
        if (best.empty() || m.val_acc > res.best_val_acc) {
            res.best_val_acc = m.val_acc;
            res.best_epoch = epoch;
            best = bundle.snapshot();
        }
    }
    if (!best.empty()) bundle.restore(best);
    return res;
}

PretrainReport identity_pretrain(ModelBundle& bundle,
                                 const std::vector<SequenceData>& train_data,
                                 std::size_t epochs, std::uint64_t seed) {
    const auto& d = bundle.dims;
    std::set<int> ids;
    for (const auto& sd : train_data) ids.insert(sd.identity);
    if (ids.size() < 2) throw FerError("identity_pretrain: need >= 2 identities");
    std::vector<int> id_list(ids.begin(), ids.end());
    auto id_index = [&](int identity) {
        return static_cast<int>(std::lower_bound(id_list.begin(), id_list.end(), identity) -
                                id_list.begin());
    };

    Rng rng(seed ^ 0x69645f70ull);
    nn::ParamStore head_store;
    auto head = nn::Linear::create(head_store, "head", d.d_i, id_list.size(), rng);
    head_store.set_weight_decay(0.0);

    // hold out ~20% of I frames for the accuracy gate
    auto order = rng.permutation(train_data.size());
    const std::size_t n_hold = std::max<std::size_t>(1, train_data.size() / 5);
    std::vector<std::size_t> hold(order.begin(), order.begin() + n_hold);
    std::vector<std::size_t> fit_idx(order.begin() + n_hold, order.end());

    const std::size_t per = d.c * d.h * d.w;
    auto make_batch = [&](const std::vector<std::size_t>& idx, std::size_t start,
                          std::size_t bsz, std::vector<int>& labels) {
        Tensor imgs = Tensor::zeros({bsz, d.c, d.h, d.w});
        labels.resize(bsz);
        for (std::size_t b = 0; b < bsz; ++b) {
            const auto& f = train_data[idx[start + b]].gop.i_frame;
            for (std::size_t p = 0; p < d.h * d.w; ++p)
                for (std::size_t ch = 0; ch < d.c; ++ch)
                    (*imgs.data)[b * per + ch * d.h * d.w + p] = f.pixels[p * d.c + ch] / 255.0;
            labels[b] = id_index(train_data[idx[start + b]].identity);
        }
        return imgs;
    };

    const std::size_t batch = 32;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        auto perm = rng.permutation(fit_idx.size());
        std::vector<std::size_t> shuffled(fit_idx.size());
        for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = fit_idx[perm[i]];
        for (std::size_t start = 0; start < shuffled.size(); start += batch) {
            const std::size_t bsz = std::min(batch, shuffled.size() - start);
            std::vector<int> labels;
            Tensor imgs = make_batch(shuffled, start, bsz, labels);
            Graph g;
            Tensor z = bundle.identity_embed(g, imgs);
            Tensor probs = softmax(g, head.forward(g, z));
            Tensor ce = loss_cross_entropy(g, probs, labels);
            bundle.fi.zero_grads();
            head_store.zero_grads();
            g.backward(ce);
            bundle.fi.adam_step(1e-3);
            head_store.adam_step(1e-3);
        }
    }

    std::size_t correct = 0;
    for (std::size_t start = 0; start < hold.size(); start += batch) {
        const std::size_t bsz = std::min(batch, hold.size() - start);
        std::vector<int> labels;
        Tensor imgs = make_batch(hold, start, bsz, labels);
        Graph g;
        Tensor probs = softmax(g, head.forward(g, bundle.identity_embed(g, imgs)));
        for (std::size_t b = 0; b < bsz; ++b)
            if (argmax_row(probs, b) == static_cast<std::size_t>(labels[b])) ++correct;
    }
    PretrainReport rep;
    rep.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(hold.size());
    rep.checksum = bundle.fi.checksum();
    if (rep.holdout_accuracy < 0.6)
        throw FerError("identity_pretrain: fixture error, held-out identity accuracy " +
                       std::to_string(rep.holdout_accuracy) + " < 0.6");
    return rep;
}

// ---- MICM checkpoint container ----

namespace {

void put_u8(std::ostream& o, std::uint8_t v) { o.put(static_cast<char>(v)); }
void put_u16(std::ostream& o, std::uint16_t v) {
    o.put(static_cast<char>(v & 0xff));
    o.put(static_cast<char>(v >> 8));
}
void put_u32(std::ostream& o, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) o.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::ostream& o, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) o.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct CkptReader {
    std::istream& in;
    std::uint8_t u8(const char* what) {
        const int ch = in.get();
        if (ch == EOF) throw FerError(std::string("checkpoint truncated reading ") + what);
        return static_cast<std::uint8_t>(ch);
    }
    std::uint16_t u16(const char* what) {
        const std::uint16_t lo = u8(what), hi = u8(what);
        return static_cast<std::uint16_t>(lo | (hi << 8));
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8(what)) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(u8(what)) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

struct Record {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

void write_record(std::ostream& o, const std::string& name, const Tensor& t) {
    if (name.size() > 255) throw FerError("checkpoint record name too long: " + name);
    put_u8(o, static_cast<std::uint8_t>(name.size()));
    o.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u8(o, static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t e : t.shape) put_u32(o, static_cast<std::uint32_t>(e));
    for (double v : *t.data) put_f64(o, v);
}

const char* const kStorePrefixes[] = {"fer/", "dec/", "fi/", "t/"};

}  // namespace

void save_checkpoint(const ModelBundle& bundle, std::ostream& sink) {
    const auto& d = bundle.dims;
    std::vector<std::pair<std::string, const nn::ParamStore*>> stores = {
        {"fer/", &bundle.fer}, {"dec/", &bundle.dec}, {"fi/", &bundle.fi}, {"t/", &bundle.tnet}};
    std::size_t count = 1;
    for (auto& [prefix, ps] : stores) count += ps->names().size();

    sink.write("MICM", 4);
    put_u8(sink, 1);
    put_u16(sink, static_cast<std::uint16_t>(count));
    Tensor meta = Tensor::from(
        {9}, {static_cast<double>(d.d_e), static_cast<double>(d.d_i),
              static_cast<double>(d.n_classes), static_cast<double>(d.h),
              static_cast<double>(d.w), static_cast<double>(d.c),
              d.with_motion ? 1.0 : 0.0, static_cast<double>(d.t_hidden),
              static_cast<double>(d.dec_hidden)});
    write_record(sink, "__meta__", meta);
    for (auto& [prefix, ps] : stores)
        for (const auto& name : ps->names()) write_record(sink, prefix + name, ps->get(name));
    if (!sink) throw FerError("save_checkpoint: sink write failed");
}

ModelBundle load_checkpoint(std::istream& source) {
    CkptReader r{source};
    char magic[4];
    source.read(magic, 4);
    if (source.gcount() != 4 || std::memcmp(magic, "MICM", 4) != 0)
        throw FerError("load_checkpoint: bad magic (expected MICM)");
    const std::uint8_t version = r.u8("version");
    if (version != 1)
        throw FerError("load_checkpoint: unsupported version " + std::to_string(version));
    const std::uint16_t count = r.u16("record count");

    std::vector<Record> records;
    for (std::uint16_t i = 0; i < count; ++i) {
        Record rec;
        const std::uint8_t nlen = r.u8("name length");
        rec.name.resize(nlen);
        source.read(rec.name.data(), nlen);
        if (source.gcount() != nlen) throw FerError("checkpoint truncated reading record name");
        const std::uint8_t rank = r.u8("rank");
        std::size_t n = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            rec.shape.push_back(r.u32("extent"));
            n *= rec.shape.back();
        }
        rec.values.resize(n);
        for (std::size_t v = 0; v < n; ++v) rec.values[v] = r.f64(rec.name.c_str());
        records.push_back(std::move(rec));
    }

    auto find = [&](const std::string& name) -> Record& {
        for (auto& rec : records)
            if (rec.name == name) return rec;
        throw FerError("load_checkpoint: missing record " + name);
    };

    const Record& meta = find("__meta__");
    if (meta.values.size() != 9) throw FerError("load_checkpoint: malformed __meta__ record");
    ModelDims dims;
    dims.d_e = static_cast<std::size_t>(meta.values[0]);
    dims.d_i = static_cast<std::size_t>(meta.values[1]);
    dims.n_classes = static_cast<std::size_t>(meta.values[2]);
    dims.h = static_cast<std::size_t>(meta.values[3]);
    dims.w = static_cast<std::size_t>(meta.values[4]);
    dims.c = static_cast<std::size_t>(meta.values[5]);
    dims.with_motion = meta.values[6] != 0.0;
    dims.t_hidden = static_cast<std::size_t>(meta.values[7]);
    dims.dec_hidden = static_cast<std::size_t>(meta.values[8]);

    ModelBundle bundle = ModelBundle::init(dims, 0);
    nn::ParamStore* stores[] = {&bundle.fer, &bundle.dec, &bundle.fi, &bundle.tnet};
    for (int s = 0; s < 4; ++s) {
        for (const auto& name : stores[s]->names()) {
            const std::string full = kStorePrefixes[s] + name;
            Record& rec = find(full);
            Tensor& p = stores[s]->get(name);
            if (rec.shape != p.shape)
                throw FerError("load_checkpoint: shape mismatch for record " + full);
            *p.data = rec.values;
        }
    }
    return bundle;
}

void save_checkpoint_file(const ModelBundle& bundle, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FerError("cannot open checkpoint for writing: " + path);
    save_checkpoint(bundle, out);
}

ModelBundle load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FerError("cannot open checkpoint: " + path);
    return load_checkpoint(in);
}

}  // namespace mic::fer
