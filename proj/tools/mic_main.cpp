// mic: command-line surface for the codec, the data generator, training and
// evaluation. Every subcommand is deterministic given its flags and seeds.
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mic/eval.hpp"
#include "mic/fer.hpp"
#include "mic/gop.hpp"
#include "mic/mine.hpp"
#include "mic/synth.hpp"

namespace {

using namespace mic;

fer::TrainConfig parse_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    fer::TrainConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key, eq, value;
        if (!(ls >> key)) continue;  // blank line
        if (!(ls >> eq >> value) || eq != "=")
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected `key = value`");
        auto as_double = [&] { return std::stod(value); };
        auto as_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
        auto as_bool = [&] {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": boolean must be true/false, got " + value);
        };
        if (key == "alpha") cfg.alpha = as_double();
        else if (key == "beta_epochs") cfg.beta_epochs = as_size();
        else if (key == "lr") cfg.lr = as_double();
        else if (key == "lr_drop_epoch") cfg.lr_drop_epoch = as_size();
        else if (key == "lr_drop_factor") cfg.lr_drop_factor = as_double();
        else if (key == "epochs") cfg.epochs = as_size();
        else if (key == "batch") cfg.batch = as_size();
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "with_motion") cfg.with_motion = as_bool();
        else if (key == "disable_mi") cfg.disable_mi = as_bool();
        else if (key == "disable_recon") cfg.disable_recon = as_bool();
        else if (key == "weight_decay") cfg.weight_decay = as_double();
        else if (key == "ema_rate") cfg.ema_rate = as_double();
        else
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": unknown config key `" + key + "`");
    }
    return cfg;
}

std::vector<fer::SequenceData> load_split(const std::string& data_dir, const std::string& split,
                                          bool with_motion) {
    const std::string manifest = data_dir + "/" + split + ".csv";
    auto entries = synth::load_manifest(manifest);
    return fer::load_sequences(entries, data_dir, with_motion);
}

// copies the frozen identity-encoder weights from a pretraining checkpoint
void adopt_identity_encoder(fer::ModelBundle& dst, const fer::ModelBundle& src) {
    for (const auto& name : src.fi.names()) {
        const Tensor& s = src.fi.get(name);
        Tensor& d = dst.fi.get(name);
        if (d.shape != s.shape)
            throw std::runtime_error("identity checkpoint shape mismatch for " + name);
        *d.data = *s.data;
    }
}

int cmd_encode(const std::string& input, const std::string& output, std::size_t mb,
               std::size_t search) {
    auto frames = gop::parse_rraw_file(input);
    gop::CodecConfig cc;
    cc.mb = mb;
    cc.search_range = static_cast<int>(search);
    gop::write_gop_file(gop::encode_gop(frames, cc), output);
    std::cout << "encoded " << frames.size() << " frames -> " << output << "\n";
    return 0;
}

int cmd_decode(const std::string& input, std::size_t frame, const std::string& output) {
    gop::Gop g = gop::parse_gop_file(input);
    gop::RawFrame f = gop::decode_frame(g, frame);
    gop::write_rraw_file({f}, output);
    std::cout << "decoded frame " << frame << " -> " << output << "\n";
    return 0;
}

int cmd_gen_data(const synth::DatasetConfig& cfg, const std::string& out_dir) {
    auto manifest = synth::generate_dataset(cfg, out_dir);
    std::cout << "wrote " << manifest.train.size() << " train and " << manifest.test.size()
              << " test sequences under " << out_dir << "\n";
    return 0;
}

int cmd_pretrain_id(const std::string& data_dir, const std::string& out,
                    std::size_t epochs, std::uint64_t seed) {
    auto train = load_split(data_dir, "train", false);
    fer::ModelDims dims;
    auto bundle = fer::ModelBundle::init(dims, seed);
    auto report = fer::identity_pretrain(bundle, train, epochs, seed);
    fer::save_checkpoint_file(bundle, out);
    std::cout << "identity pretraining holdout accuracy " << report.holdout_accuracy
              << ", trunk checksum " << report.checksum << " -> " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& id_ckpt, const std::string& out,
              const std::string& metrics_path) {
    fer::TrainConfig cfg = parse_train_config(config_path);
    auto train = load_split(data_dir, "train", cfg.with_motion);
    auto test = load_split(data_dir, "test", cfg.with_motion);

    fer::ModelDims dims;
    dims.with_motion = cfg.with_motion;
    auto bundle = fer::ModelBundle::init(dims, cfg.seed);
    adopt_identity_encoder(bundle, fer::load_checkpoint_file(id_ckpt));

    std::ofstream metrics;
    std::ostream* metrics_sink = nullptr;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path);
        if (!metrics) throw std::runtime_error("cannot open metrics file: " + metrics_path);
        metrics_sink = &metrics;
    }
    auto result = fer::fit(bundle, cfg, train, test, metrics_sink);
    fer::save_checkpoint_file(bundle, out);
    std::cout << "best validation accuracy " << result.best_val_acc << " at epoch "
              << result.best_epoch << " -> " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& model, const std::string& data_dir, const std::string& split,
             const std::string& report_path, bool with_probe, bool with_mi, bool with_fps,
             std::uint64_t seed) {
    auto bundle = fer::load_checkpoint_file(model);
    auto data = load_split(data_dir, split, bundle.dims.with_motion);
    // the report file stays byte-identical across runs; wall-clock throughput
    // goes to stdout only
    evalr::EvalReport report = evalr::evaluate(bundle, data, with_fps);
    if (with_fps && report.fps) {
        std::cout << "expression branch throughput: " << *report.fps << " P frames/s\n";
        report.fps.reset();
    }
    if (with_probe) {
        auto probe = evalr::probe_identity(bundle, data, 300, seed);
        report.identity_probe_accuracy = probe.accuracy;
        report.chance = probe.chance;
    }
    if (with_mi) report.mi_ze_zi = evalr::measure_mi(bundle, data, 400, seed).value;
    std::ofstream out(report_path);
    if (!out) throw std::runtime_error("cannot open report file: " + report_path);
    evalr::write_report_json(report, out);
    std::cout << "expression accuracy " << report.expression_accuracy << " -> " << report_path
              << "\n";
    return 0;
}

int cmd_probe_id(const std::string& model, const std::string& data_dir,
                 const std::string& split, std::size_t probe_epochs, std::uint64_t seed) {
    auto bundle = fer::load_checkpoint_file(model);
    auto data = load_split(data_dir, split, bundle.dims.with_motion);
    auto probe = evalr::probe_identity(bundle, data, probe_epochs, seed);
    std::cout << "identity probe accuracy " << probe.accuracy << " (chance " << probe.chance
              << ")\n";
    return 0;
}

int cmd_mi_bench(double rho, std::size_t dim, std::size_t steps, std::size_t batch,
                 std::uint64_t seed, const std::string& csv_path) {
    auto sampler = mine::make_gaussian_sampler(rho, dim, batch);
    std::ofstream csv;
    std::ostream* csv_sink = nullptr;
    if (!csv_path.empty()) {
        csv.open(csv_path);
        if (!csv) throw std::runtime_error("cannot open csv file: " + csv_path);
        csv_sink = &csv;
    }
    Rng rng(seed);
    auto res = mine::estimate_mi_converged(sampler, dim, dim, steps, 5e-4, rng, csv_sink);
    const double truth = -0.5 * static_cast<double>(dim) * std::log(1.0 - rho * rho);
    std::cout << "estimate " << res.value << " nats (truth " << truth << ", raw " << res.raw
              << (res.saturated ? ", saturated" : "") << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compressed-video expression classifier lab"};
    app.require_subcommand(1);

    std::string input, output, out_dir, data_dir, config_path, id_ckpt, model, report_path,
        metrics_path, csv_path, split = "test", profile = "ramp";
    std::size_t mb = 8, search = 4, frame = 0, epochs = 30, probe_epochs = 300, dim = 1,
                steps = 2000, batch = 512;
    std::uint64_t seed = 0;
    double rho = 0.0;
    synth::DatasetConfig dcfg;
    bool with_probe = false, with_mi = false, with_fps = false;

    auto* enc = app.add_subcommand("encode", "encode an RRAW sequence into an RGOP file");
    enc->add_option("--input", input, "RRAW input path")->required();
    enc->add_option("--output", output, "RGOP output path")->required();
    enc->add_option("--mb", mb, "macroblock size");
    enc->add_option("--search", search, "motion search range");

    auto* dec = app.add_subcommand("decode", "decode one frame of an RGOP file to RRAW");
    dec->add_option("--input", input, "RGOP input path")->required();
    dec->add_option("--frame", frame, "frame index")->required();
    dec->add_option("--output", output, "RRAW output path")->required();

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    gen->add_option("--identities", dcfg.n_identities, "number of identities");
    gen->add_option("--classes", dcfg.n_classes, "number of expression classes");
    gen->add_option("--per-cell", dcfg.sequences_per_cell, "sequences per (identity, class)");
    gen->add_option("--profile", profile, "intensity profile: ramp|peak");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "split/noise seed");

    auto* pre = app.add_subcommand("pretrain-id", "pretrain the frozen identity encoder");
    pre->add_option("--data", data_dir, "dataset directory")->required();
    pre->add_option("--out", output, "checkpoint output path")->required();
    pre->add_option("--epochs", epochs, "pretraining epochs");
    pre->add_option("--seed", seed, "init/shuffle seed");

    auto* trn = app.add_subcommand("train", "train the expression classifier");
    trn->add_option("--config", config_path, "key = value training config")->required();
    trn->add_option("--data", data_dir, "dataset directory")->required();
    trn->add_option("--id-ckpt", id_ckpt, "identity-encoder checkpoint")->required();
    trn->add_option("--out", output, "model checkpoint output path")->required();
    trn->add_option("--metrics", metrics_path, "per-epoch metrics CSV path");

    auto* evl = app.add_subcommand("eval", "evaluate a trained model");
    evl->add_option("--model", model, "model checkpoint")->required();
    evl->add_option("--data", data_dir, "dataset directory")->required();
    evl->add_option("--split", split, "manifest split: train|test");
    evl->add_option("--report", report_path, "JSON report output path")->required();
    evl->add_flag("--probe", with_probe, "include the identity-probe accuracy");
    evl->add_flag("--mi", with_mi, "include the measured MI(z_E; z_I)");
    evl->add_flag("--fps", with_fps, "print forward throughput (stdout only)");
    evl->add_option("--seed", seed, "probe/MI seed");

    auto* prb = app.add_subcommand("probe-id", "identity probe on frozen z_E");
    prb->add_option("--model", model, "model checkpoint")->required();
    prb->add_option("--data", data_dir, "dataset directory")->required();
    prb->add_option("--split", split, "manifest split: train|test");
    prb->add_option("--probe-epochs", probe_epochs, "probe training epochs");
    prb->add_option("--seed", seed, "probe seed");

    auto* mib = app.add_subcommand("mi-bench", "correlated-Gaussian MI benchmark");
    mib->add_option("--rho", rho, "componentwise correlation");
    mib->add_option("--dim", dim, "dimensionality of each variable");
    mib->add_option("--steps", steps, "training steps");
    mib->add_option("--batch", batch, "batch size");
    mib->add_option("--seed", seed, "sampling/init seed");
    mib->add_option("--csv", csv_path, "per-step CSV output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (enc->parsed()) return cmd_encode(input, output, mb, search);
        if (dec->parsed()) return cmd_decode(input, frame, output);
        if (gen->parsed()) {
            dcfg.profile = synth::profile_from_name(profile);
            dcfg.split_seed = seed;
            return cmd_gen_data(dcfg, out_dir);
        }
        if (pre->parsed()) return cmd_pretrain_id(data_dir, output, epochs, seed);
        if (trn->parsed()) return cmd_train(config_path, data_dir, id_ckpt, output, metrics_path);
        if (evl->parsed())
            return cmd_eval(model, data_dir, split, report_path, with_probe, with_mi, with_fps,
                            seed);
        if (prb->parsed()) return cmd_probe_id(model, data_dir, split, probe_epochs, seed);
        if (mib->parsed()) return cmd_mi_bench(rho, dim, steps, batch, seed, csv_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
