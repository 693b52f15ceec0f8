#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mic/fer.hpp"

namespace mic::evalr {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvalReport {
    double expression_accuracy = 0.0;
    std::vector<std::vector<long>> confusion;  // [true][predicted]
    std::optional<double> identity_probe_accuracy;
    std::optional<double> chance;  // 1 / n_identities in the probed split
    std::optional<double> mi_ze_zi;
    std::optional<double> fps;  // forward_expression throughput, wall-clock
};

// Per-sequence argmax prediction over a split; fps counts only the expression
// branch forward pass (P frames / second), no decode or encode cost.
EvalReport evaluate(fer::ModelBundle& bundle, const std::vector<fer::SequenceData>& split,
                    bool measure_fps = true);

struct ProbeResult {
    double accuracy = 0.0;
    double chance = 0.0;
};

// Linear softmax probe on fixed (n, d) features; trains on a 70% subset,
// reports held-out accuracy and the chance level 1/n_classes.
ProbeResult probe_features(const Tensor& features, const std::vector<int>& labels,
                           std::size_t epochs, std::uint64_t seed);

// probe_features on frozen z_E with identity labels.
ProbeResult probe_identity(fer::ModelBundle& bundle,
                           const std::vector<fer::SequenceData>& split,
                           std::size_t probe_epochs, std::uint64_t seed);

// Same probe mechanics on frozen z_I with expression labels (chance check).
ProbeResult probe_expression_on_identity(fer::ModelBundle& bundle,
                                         const std::vector<fer::SequenceData>& split,
                                         std::size_t probe_epochs, std::uint64_t seed);

// Extracts (z_E, z_I) pairs over the split and trains a fresh statistics net.
mine::ConvergedMi measure_mi(fer::ModelBundle& bundle,
                             const std::vector<fer::SequenceData>& split,
                             std::size_t steps, std::uint64_t seed);

// z_E of every sequence in the split: (n, d_e)
Tensor expression_embeddings(fer::ModelBundle& bundle,
                             const std::vector<fer::SequenceData>& split);

void write_report_json(const EvalReport& report, std::ostream& out);

}  // namespace mic::evalr
