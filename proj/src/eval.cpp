#include "mic/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <set>

#include <json.hpp>

namespace mic::evalr {


ProbeResult probe_features(const Tensor& features, const std::vector<int>& labels,
                           std::size_t epochs, std::uint64_t seed) {
    const std::size_t n = features.shape[0], dim = features.shape[1];
    std::set<int> classes(labels.begin(), labels.end());
    if (classes.size() < 2) throw EvalError("probe_features: need >= 2 classes in split");
    std::vector<int> class_list(classes.begin(), classes.end());
    auto index_of = [&](int c) {
        return static_cast<int>(std::lower_bound(class_list.begin(), class_list.end(), c) -
                                class_list.begin());
    };

    Rng rng(seed ^ 0x70726f62ull);
    auto order = rng.permutation(n);
    const std::size_t n_train = std::max<std::size_t>(1, (n * 7) / 10);
    if (n_train >= n) throw EvalError("probe_features: split too small to hold out");

    auto gather = [&](std::size_t begin, std::size_t end, Tensor& x, std::vector<int>& y) {
        const std::size_t m = end - begin;
        x = Tensor::zeros({m, dim});
        y.resize(m);
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(features.data->data() + order[begin + i] * dim, dim,
                        x.data->data() + i * dim);
            y[i] = index_of(labels[order[begin + i]]);
        }
    };
    Tensor x_train, x_test;
    std::vector<int> y_train, y_test;
    gather(0, n_train, x_train, y_train);
    gather(n_train, n, x_test, y_test);

    nn::ParamStore ps;
    auto lin = nn::Linear::create(ps, "probe", dim, class_list.size(), rng);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        Graph g;
        Tensor probs = softmax(g, lin.forward(g, x_train));
        Tensor ce = fer::loss_cross_entropy(g, probs, y_train);
        ps.zero_grads();
        g.backward(ce);
        ps.adam_step(0.05);
    }

    Graph g;
    Tensor probs = softmax(g, lin.forward(g, x_test));
    std::size_t correct = 0;
    const std::size_t c = class_list.size();
    for (std::size_t i = 0; i < y_test.size(); ++i) {
        const double* row = probs.data->data() + i * c;
        const auto pred = static_cast<std::size_t>(std::max_element(row, row + c) - row);
        if (pred == static_cast<std::size_t>(y_test[i])) ++correct;
    }
    ProbeResult res;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(y_test.size());
    res.chance = 1.0 / static_cast<double>(class_list.size());
    return res;
}

Tensor expression_embeddings(fer::ModelBundle& bundle,
                             const std::vector<fer::SequenceData>& split) {
    return fer::forward_split(bundle, split).z_e;
}

EvalReport evaluate(fer::ModelBundle& bundle, const std::vector<fer::SequenceData>& split,
                    bool measure_fps) {
    if (split.empty()) throw EvalError("evaluate: empty split");
    const std::size_t c = bundle.dims.n_classes;

    const auto t0 = std::chrono::steady_clock::now();
    fer::SplitForward fwd = fer::forward_split(bundle, split);
    const auto t1 = std::chrono::steady_clock::now();

    EvalReport rep;
    rep.confusion.assign(c, std::vector<long>(c, 0));
    std::size_t correct = 0, p_frames = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        const auto truth = static_cast<std::size_t>(split[i].label);
        rep.confusion[truth][fwd.predictions[i]] += 1;
        if (fwd.predictions[i] == truth) ++correct;
        p_frames += split[i].gop.p_frames.size();
    }
    rep.expression_accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    if (measure_fps) {
        const double secs = std::chrono::duration<double>(t1 - t0).count();
        rep.fps = secs > 0 ? static_cast<double>(p_frames) / secs : 0.0;
    }
    return rep;
}

ProbeResult probe_identity(fer::ModelBundle& bundle,
                           const std::vector<fer::SequenceData>& split,
                           std::size_t probe_epochs, std::uint64_t seed) {
    if (split.empty()) throw EvalError("probe_identity: empty split");
    std::set<int> ids;
    for (const auto& sd : split) ids.insert(sd.identity);
    if (ids.size() < 2) throw EvalError("probe_identity: split has a single identity");
    const std::uint64_t before = bundle.fer.checksum() ^ bundle.fi.checksum();
    Tensor z_e = expression_embeddings(bundle, split);
    std::vector<int> labels;
    for (const auto& sd : split) labels.push_back(sd.identity);
    auto res = probe_features(z_e, labels, probe_epochs, seed);
    if ((bundle.fer.checksum() ^ bundle.fi.checksum()) != before)
        throw EvalError("probe_identity: bundle mutated during probing");
    return res;
}

ProbeResult probe_expression_on_identity(fer::ModelBundle& bundle,
                                         const std::vector<fer::SequenceData>& split,
                                         std::size_t probe_epochs, std::uint64_t seed) {
    if (split.empty()) throw EvalError("probe_expression_on_identity: empty split");
    Tensor z_i = fer::compute_identity_embeddings(bundle, split);
    std::vector<int> labels;
    for (const auto& sd : split) labels.push_back(sd.label);
    return probe_features(z_i, labels, probe_epochs, seed);
}

mine::ConvergedMi measure_mi(fer::ModelBundle& bundle,
                             const std::vector<fer::SequenceData>& split,
                             std::size_t steps, std::uint64_t seed) {
    if (split.size() < 64) throw EvalError("measure_mi: split must hold >= 64 sequences");
    const std::uint64_t before = bundle.fer.checksum() ^ bundle.fi.checksum();
    Tensor z_e = expression_embeddings(bundle, split);
    Tensor z_i = fer::compute_identity_embeddings(bundle, split);
    // full-split batch each step; the DV estimate is capped at ln(n) anyway
    mine::BatchSampler sampler = [&](Rng&) { return std::make_pair(z_e, z_i); };
    Rng rng(seed ^ 0x6d65615full);
    auto res = mine::estimate_mi_converged(sampler, bundle.dims.d_e, bundle.dims.d_i, steps,
                                           5e-4, rng);
    if ((bundle.fer.checksum() ^ bundle.fi.checksum()) != before)
        throw EvalError("measure_mi: bundle mutated during measurement");
    return res;
}

void write_report_json(const EvalReport& report, std::ostream& out) {
    nlohmann::json j;
    j["expression_accuracy"] = report.expression_accuracy;
    j["confusion_matrix"] = report.confusion;
    if (report.identity_probe_accuracy) {
        j["identity_probe_accuracy"] = *report.identity_probe_accuracy;
        j["chance"] = *report.chance;
    }
    if (report.mi_ze_zi) j["mi_ze_zi"] = *report.mi_ze_zi;
    if (report.fps) j["fps"] = *report.fps;
    out << j.dump(2) << '\n';
}

}  // namespace mic::evalr
