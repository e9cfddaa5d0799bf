#include "legs4/codec.hpp"

#include "legs4/tensor_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>

namespace legs4 {

using nlohmann::json;
namespace fs = std::filesystem;

void CodecTrainConfig::validate() const {
    if (!(lr > 0)) throw Error("codec: lr must be positive");
    if (!(cosine_weight >= 0)) throw Error("codec: cosine weight must be non-negative");
    if (batch_size <= 0) throw Error("codec: batch size must be positive");
    if (steps < 0 || epochs < 0) throw Error("codec: steps/epochs must be non-negative");
}

namespace {

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
}

} // namespace

CodecParams make_codec(int D, int d, const std::vector<int>& hidden, uint64_t seed) {
    if (D <= 0 || d <= 0) throw Error("codec: dimensions must be positive");
    CodecParams c;
    c.D = D;
    c.d = d;
    c.seed = seed;
    c.encoder = Mlp<float>(layer_sizes(D, hidden, d));
    std::vector<int> rev(hidden.rbegin(), hidden.rend());
    c.decoder = Mlp<float>(layer_sizes(d, rev, D));
    c.encoder.init(seed * 2 + 1);
    c.decoder.init(seed * 2 + 2);
    return c;
}

MatrixXfR CodecParams::encode(const MatrixXfR& x) const {
    if (x.cols() != D) throw Error("encode: expected " + std::to_string(D) + " features, got " + std::to_string(x.cols()));
    Mlp<float>::Mat raw = encoder.forward(x);
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        const float n = std::max(raw.row(i).norm(), 1e-12f);
        raw.row(i) /= n;
    }
    return raw;
}

MatrixXfR CodecParams::decode(const MatrixXfR& z) const {
    if (z.cols() != d) throw Error("decode: expected " + std::to_string(d) + " latents, got " + std::to_string(z.cols()));
    return decoder.forward(z);
}

Eigen::VectorXf CodecParams::encode(const Eigen::VectorXf& x) const {
    return encode(MatrixXfR(x.transpose())).row(0).transpose();
}

Eigen::VectorXf CodecParams::decode(const Eigen::VectorXf& z) const {
    return decode(MatrixXfR(z.transpose())).row(0).transpose();
}

CodecParams train_codec(const MatrixXfR& samples, int d, const CodecTrainConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = samples.rows();
    if (n < d) throw Error("train_codec: need at least d=" + std::to_string(d) + " samples, got " + std::to_string(n));
    if (!samples.allFinite()) throw Error("train_codec: samples not finite");
    CodecParams codec = make_codec(static_cast<int>(samples.cols()), d, cfg.hidden, cfg.seed);
    codec.cosine_weight = cfg.cosine_weight;

    const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, n);
    const long per_epoch = static_cast<long>((n + batch - 1) / batch);
    const long steps = cfg.epochs > 0 ? cfg.epochs * per_epoch : cfg.steps;

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam<float> enc_opt(codec.encoder.params().size(), acfg);
    Adam<float> dec_opt(codec.decoder.params().size(), acfg);

    Rng rng(cfg.seed ^ 0xC0DEC0DEULL);
    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Eigen::Index cursor = n;  // forces a shuffle on the first step
    Mlp<float>::Mat x(batch, samples.cols());
    Mlp<float>::Vec g_enc, g_dec;
    codec.loss_trace.reserve(static_cast<size_t>(steps));
    for (long step = 0; step < steps; ++step) {
        for (Eigen::Index b = 0; b < batch; ++b) {
            if (cursor >= n) {
                for (Eigen::Index i = n - 1; i > 0; --i)
                    std::swap(order[static_cast<size_t>(i)], order[rng.below(static_cast<uint64_t>(i + 1))]);
                cursor = 0;
            }
            x.row(b) = samples.row(order[static_cast<size_t>(cursor++)]);
        }
        g_enc.setZero(codec.encoder.params().size());
        g_dec.setZero(codec.decoder.params().size());
        const double loss = autoencoder_loss(codec.encoder, codec.decoder, x, cfg.cosine_weight, &g_enc, &g_dec);
        if (!std::isfinite(loss)) throw Error("codec training diverged (loss NaN) at step " + std::to_string(step));
        codec.loss_trace.push_back(loss);
        enc_opt.step(codec.encoder.params(), g_enc);
        dec_opt.step(codec.decoder.params(), g_dec);
    }
    if (steps > 0) {
        codec.final_loss = codec.loss_trace.back();
    } else {
        Mlp<float>::Mat all = samples.topRows(batch);
        codec.final_loss = autoencoder_loss<float>(codec.encoder, codec.decoder, all, cfg.cosine_weight, nullptr, nullptr);
    }
    return codec;
}

void save_codec(const CodecParams& codec, const fs::path& dir) {
    fs::create_directories(dir);
    auto blob = [](const Mlp<float>& mlp) {
        const auto& p = mlp.params();
        return Tensor::from_f32({static_cast<uint64_t>(p.size())}, {p.data(), p.data() + p.size()});
    };
    write_tensor(dir / "encoder.4leg", blob(codec.encoder));
    write_tensor(dir / "decoder.4leg", blob(codec.decoder));
    json j{{"D", codec.D},
           {"d", codec.d},
           {"encoder_sizes", codec.encoder.sizes()},
           {"decoder_sizes", codec.decoder.sizes()},
           {"activation", "tanh"},
           {"latent_normalized", true},
           {"cosine_weight", codec.cosine_weight},
           {"seed", codec.seed},
           {"final_loss", codec.final_loss},
           {"encoder", "encoder.4leg"},
           {"decoder", "decoder.4leg"}};
    std::ofstream out(dir / "codec.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "codec.json").string());
    out << j.dump(2) << '\n';
}

CodecParams load_codec(const fs::path& dir) {
    std::ifstream in(dir / "codec.json");
    if (!in) throw IoError("missing file: " + (dir / "codec.json").string());
    try {
        const json j = json::parse(in);
        CodecParams c;
        c.D = j.at("D").get<int>();
        c.d = j.at("d").get<int>();
        c.cosine_weight = j.value("cosine_weight", 1e-3);
        c.seed = j.value("seed", uint64_t{0});
        c.final_loss = j.value("final_loss", 0.0);
        c.encoder = Mlp<float>(j.at("encoder_sizes").get<std::vector<int>>());
        c.decoder = Mlp<float>(j.at("decoder_sizes").get<std::vector<int>>());
        if (c.encoder.in_dim() != c.D || c.encoder.out_dim() != c.d || c.decoder.in_dim() != c.d ||
            c.decoder.out_dim() != c.D)
            throw ValidationError("codec.json: layer sizes inconsistent with D/d");
        auto load = [&](Mlp<float>& mlp, const std::string& file, const char* what) {
            auto v = read_f32(dir / file, {static_cast<uint64_t>(mlp.params().size())}, what);
            mlp.params() = Eigen::Map<Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size()));
            if (!mlp.params().allFinite()) throw ValidationError(std::string(what) + ": weights not finite");
        };
        load(c.encoder, j.value("encoder", "encoder.4leg"), "codec encoder");
        load(c.decoder, j.value("decoder", "decoder.4leg"), "codec decoder");
        return c;
    } catch (const json::exception& e) {
        throw ValidationError("codec.json: " + std::string(e.what()));
    }
}

} // namespace legs4
