#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mic/gop.hpp"
#include "mic/mine.hpp"
#include "mic/nn.hpp"
#include "mic/synth.hpp"

namespace mic::fer {

struct FerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelDims {
    std::size_t d_e = 64, d_i = 32;
    std::size_t n_classes = 7;
    std::size_t h = 32, w = 32, c = 1;
    bool with_motion = false;  // residual+motion input mode
    std::size_t t_hidden = 128, dec_hidden = 256;

    std::size_t input_channels() const { return c + (with_motion ? 2 : 0); }
    bool operator==(const ModelDims&) const = default;
};

// Parameters of every network in Fig.-2 style: FER branch (frame encoder +
// LSTM + classifier), decoder, frozen identity encoder, statistics net.
struct ModelBundle {
    ModelDims dims;
    nn::ParamStore fer;   // f_e.*, lstm.*, cls.*
    nn::ParamStore dec;   // dec.*
    nn::ParamStore fi;    // fi.* — frozen after pretraining
    nn::ParamStore tnet;  // t.*

    static ModelBundle init(const ModelDims& dims, std::uint64_t seed);

    // frames: (N, input_channels, h, w) -> (N, d_e)
    Tensor encode_frames(Graph& g, Tensor frames);
    // feats_by_time: T tensors of (batch, d_e) -> final hidden (batch, d_e)
    Tensor aggregate(Graph& g, const std::vector<Tensor>& feats_by_time);
    Tensor classify(Graph& g, Tensor z_e);  // logits (batch, n_classes)
    // i_frames: (N, c, h, w) in [0,1] -> (N, d_i), frozen trunk
    Tensor identity_embed(Graph& g, Tensor i_frames);
    // -> reconstructed apex (batch, h*w*c) in [0,1]
    Tensor decode_apex(Graph& g, Tensor z_e, Tensor z_i);

    std::uint64_t fi_checksum() const { return fi.checksum(); }

    // deep copies of all trainable values (for best-epoch checkpointing)
    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& snap);
};

struct TrainConfig {
    double alpha = 0.1;
    std::size_t beta_epochs = 30;
    double lr = 1e-3;
    std::size_t lr_drop_epoch = 30;
    double lr_drop_factor = 0.1;
    std::size_t epochs = 100;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    bool with_motion = false;
    bool disable_mi = false;     // MIC-MI ablation
    bool disable_recon = false;  // MIC-I ablation
    double weight_decay = 1e-5;
    double ema_rate = 0.99;
};

double beta_at(const TrainConfig& cfg, std::size_t epoch);
double lr_at(const TrainConfig& cfg, std::size_t epoch);

// one sequence loaded in memory, with everything train/eval needs
struct SequenceData {
    gop::Gop gop;
    int label = 0;
    int identity = 0;
    std::size_t apex_idx = 0;
    Tensor residuals;    // (L-1, input_channels, h, w), t-ascending
    Tensor apex_target;  // (h*w*c) in [0,1]
};

std::vector<SequenceData> load_sequences(const std::vector<synth::ManifestEntry>& entries,
                                         const std::string& base_dir, bool with_motion);

// z_I for each sequence through the frozen identity encoder: (n, d_i)
Tensor compute_identity_embeddings(ModelBundle& bundle,
                                   const std::vector<SequenceData>& data);

// per-sequence inference: returns (z_e (1, d_e), probabilities (1, n_classes))
std::pair<Tensor, Tensor> forward_expression(ModelBundle& bundle, const gop::Gop& gop);

// batched forward over a whole split
struct SplitForward {
    Tensor z_e;  // (n, d_e)
    std::vector<std::size_t> predictions;
};
SplitForward forward_split(ModelBundle& bundle, const std::vector<SequenceData>& data,
                           std::size_t batch = 32);

// -mean log p_y over the batch, p floored at 1e-12
Tensor loss_cross_entropy(Graph& g, Tensor probabilities, const std::vector<int>& labels);
// mean squared error over pixels
Tensor loss_reconstruction(Graph& g, Tensor decoded, Tensor apex_target);

struct LossBreakdown {
    double ce = 0.0, mi = 0.0, recon = 0.0;
    std::size_t correct = 0, count = 0;
};

// One Algorithm-1 step over a batch of sequence indices. z_i_all rows are the
// cached frozen identity embeddings.
LossBreakdown train_step(ModelBundle& bundle, const std::vector<SequenceData>& data,
                         const std::vector<std::size_t>& batch_idx, const Tensor& z_i_all,
                         const TrainConfig& cfg, double beta, double lr,
                         mine::EmaState& ema, Rng& rng);

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss_ce = 0.0, mi_hat = 0.0, loss_recon = 0.0;
    double train_acc = 0.0, val_acc = 0.0;
};

struct FitResult {
    std::vector<EpochMetrics> log;
    double best_val_acc = 0.0;
    std::size_t best_epoch = 0;
};

// Full training loop with seeded shuffling; keeps the best-by-validation
// parameters in the bundle on return. metrics_csv gets one line per epoch.
FitResult fit(ModelBundle& bundle, const TrainConfig& cfg,
              const std::vector<SequenceData>& train_data,
              const std::vector<SequenceData>& val_data, std::ostream* metrics_csv = nullptr);

// Reference trainer: plain cross-entropy, no regularizers. Used to verify the
// regularized objective is purely additive.
FitResult fit_plain_ce(ModelBundle& bundle, const TrainConfig& cfg,
                       const std::vector<SequenceData>& train_data,
                       const std::vector<SequenceData>& val_data,
                       std::ostream* metrics_csv = nullptr);

struct PretrainReport {
    double holdout_accuracy = 0.0;
    std::uint64_t checksum = 0;
};

// Surrogate identity pretraining: classify training-split identities from
// I frames, discard the head, freeze the trunk inside `bundle.fi`.
PretrainReport identity_pretrain(ModelBundle& bundle,
                                 const std::vector<SequenceData>& train_data,
                                 std::size_t epochs, std::uint64_t seed);

// MICM checkpoint container
void save_checkpoint(const ModelBundle& bundle, std::ostream& sink);
ModelBundle load_checkpoint(std::istream& source);
void save_checkpoint_file(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint_file(const std::string& path);

}  // namespace mic::fer
