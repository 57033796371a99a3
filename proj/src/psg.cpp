#include "fplab/psg.hpp"

#include <algorithm>
#include <cmath>

#include "fplab/errors.hpp"
#include "fplab/rng.hpp"

namespace fplab::psg {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;
constexpr int kGenerateChunk = 128;

int upsampling_steps(const nn::Shape& image) {
    if (image.h != image.w) throw InvalidConfig("psg: images must be square");
    int steps = 0;
    int s = image.h;
    for (; s > 4 && s % 2 == 0; s /= 2) ++steps;
    if (s != 4) throw InvalidConfig("psg: image size must be 4 * 2^k");
    if (steps < 1) throw InvalidConfig("psg: image size must be at least 8");
    if (image.h > 64) throw InvalidConfig("psg: image size above 64 is unsupported");
    return steps;
}

// Per-sample gradient of the clamped cross-entropy w.r.t. the probability.
double bce_term(double p, bool real, double& dloss_dp) {
    const double pc = std::clamp(p, kProbEps, 1.0 - kProbEps);
    const bool inside = p > kProbEps && p < 1.0 - kProbEps;
    if (real) {
        dloss_dp = inside ? -1.0 / pc : 0.0;
        return -std::log(pc);
    }
    dloss_dp = inside ? 1.0 / (1.0 - pc) : 0.0;
    return -std::log(1.0 - pc);
}

// Mean BCE over one batch of scores against a fixed real/fake target; optionally back-propagates
// into the discriminator and returns the gradient w.r.t. its (conditioned) input.
double batch_term(nn::Network& d, const nn::Tensor& conditioned, bool real, bool backprop, nn::Tensor* input_grad) {
    const nn::Tensor probs = d.forward(conditioned, true);
    const int n = probs.n;
    double loss = 0.0;
    nn::Tensor dprobs(n, probs.shape);
    for (int i = 0; i < n; ++i) {
        double g;
        loss += bce_term(probs.data[i], real, g);
        dprobs.data[i] = g / n;
    }
    if (backprop) {
        nn::Tensor dx = d.backward(dprobs);
        if (input_grad) *input_grad = std::move(dx);
    }
    return loss / n;
}

void require_nonempty(const nn::Tensor& t, const char* what) {
    if (t.n < 1) throw InvalidBatch(std::string("psg: empty ") + what + " batch");
}

}  // namespace

void PsgConfig::validate() const {
    if (iterations < 1) throw InvalidConfig("psg.iterations: must be >= 1");
    if (batch_size < 1) throw InvalidConfig("psg.batch_size: must be >= 1");
    if (noise_dim < 1) throw InvalidConfig("psg.noise_dim: must be >= 1");
    if (source == target) throw InvalidConfig("psg.target: must differ from psg.source");
    if (!(gen_lr > 0.0) || !(disc_lr > 0.0)) throw InvalidConfig("psg learning rates must be positive");
    if (arch_scale < 1) throw InvalidConfig("psg.arch_scale: must be >= 1");
}

nn::Network build_generator(const GanArch& arch) {
    const int steps = upsampling_steps(arch.image);
    const nn::InitSpec init{kInitStd};
    int ch = 16 * arch.arch_scale * (1 << (steps - 1));
    std::vector<std::unique_ptr<nn::Layer>> layers;
    layers.push_back(nn::conv_transpose2d(arch.noise_dim + arch.num_classes, ch, 4, 1, 0, init));
    layers.push_back(nn::batch_norm2d(ch, init));
    layers.push_back(nn::relu());
    for (int i = 0; i < steps - 1; ++i) {
        layers.push_back(nn::conv_transpose2d(ch, ch / 2, 4, 2, 1, init));
        layers.push_back(nn::batch_norm2d(ch / 2, init));
        layers.push_back(nn::relu());
        ch /= 2;
    }
    layers.push_back(nn::conv_transpose2d(ch, arch.image.c, 4, 2, 1, init));
    layers.push_back(nn::tanh_layer());
    return nn::Network({arch.noise_dim + arch.num_classes, 1, 1}, std::move(layers));
}

nn::Network build_discriminator(const GanArch& arch) {
    const int steps = upsampling_steps(arch.image);
    const nn::InitSpec init{kInitStd};
    std::vector<std::unique_ptr<nn::Layer>> layers;
    int in = arch.image.c + arch.num_classes;
    int ch = 16 * arch.arch_scale;
    for (int i = 0; i < steps; ++i) {
        layers.push_back(nn::conv2d(in, ch, 4, 2, 1, init));
        layers.push_back(nn::batch_norm2d(ch, init));
        layers.push_back(nn::leaky_relu(kLeakySlope));
        in = ch;
        ch *= 2;
    }
    layers.push_back(nn::conv2d(in, 1, 4, 1, 0, init));
    layers.push_back(nn::sigmoid_layer());
    return nn::Network({arch.image.c + arch.num_classes, arch.image.h, arch.image.w}, std::move(layers));
}

GanState make_gan_state(const GanArch& arch, const PsgConfig& config) {
    GanState s{arch, build_generator(arch), build_discriminator(arch), {}, {}, 0};
    Rng rng(derive_seed(config.seed, {stream::init, 0x6a}));
    s.generator.init(rng);
    s.discriminator.init(rng);
    s.generator_opt.lr = config.gen_lr;
    s.generator_opt.beta1 = config.beta1;
    s.discriminator_opt.lr = config.disc_lr;
    s.discriminator_opt.beta1 = config.beta1;
    return s;
}

std::vector<data::LabeledSample> flip_source_labels(std::span<const data::LabeledSample> batch, int source,
                                                    int target) {
    if (source == target) throw InvalidConfig("flip_source_labels: source equals target");
    std::vector<data::LabeledSample> out(batch.begin(), batch.end());
    for (auto& s : out)
        if (s.label == source) s.label = target;
    return out;
}

nn::Tensor sample_noise(NoiseDist dist, int b, int noise_dim, std::uint64_t seed) {
    if (b < 1) throw InvalidBatch("sample_noise: batch size must be >= 1");
    if (noise_dim < 1) throw InvalidConfig("sample_noise: noise_dim must be >= 1");
    if (dist != NoiseDist::standard_normal) throw InvalidConfig("sample_noise: unsupported distribution");
    nn::Tensor z(b, {noise_dim, 1, 1});
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : z.data) v = normal(rng);
    return z;
}

nn::Tensor condition_images(const nn::Tensor& images, std::span<const int> labels, int num_classes) {
    if (static_cast<int>(labels.size()) != images.n) throw ShapeError("condition_images: label count mismatch");
    const nn::Shape s = images.shape;
    const int plane = s.h * s.w;
    nn::Tensor out(images.n, {s.c + num_classes, s.h, s.w});
    for (int i = 0; i < images.n; ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) throw InvalidInput("condition_images: label out of range");
        std::copy_n(images.sample(i), images.sample_size(), out.sample(i));
        std::fill_n(out.sample(i) + static_cast<std::size_t>(s.c + labels[i]) * plane, plane, 1.0);
    }
    return out;
}

nn::Tensor generator_input(const nn::Tensor& z, int label, int num_classes) {
    if (label < 0 || label >= num_classes) throw InvalidInput("generator_input: label out of range");
    const int nz = static_cast<int>(z.sample_size());
    nn::Tensor out(z.n, {nz + num_classes, 1, 1});
    for (int i = 0; i < z.n; ++i) {
        std::copy_n(z.sample(i), nz, out.sample(i));
        out.sample(i)[nz + label] = 1.0;
    }
    return out;
}

std::vector<double> discriminator_scores(nn::Network& discriminator, const nn::Tensor& images,
                                         std::span<const int> labels, int num_classes, bool training) {
    const nn::Tensor probs = discriminator.forward(condition_images(images, labels, num_classes), training);
    return probs.data;
}

double discriminator_forward(nn::Network& discriminator, std::span<const double> image, int condition,
                             int num_classes) {
    const nn::Shape in = discriminator.input_shape();
    const nn::Shape img{in.c - num_classes, in.h, in.w};
    if (image.size() != img.size())
        throw ShapeError("discriminator_forward: image has " + std::to_string(image.size()) + " values, expected " +
                         std::to_string(img.size()));
    nn::Tensor t(1, img);
    std::copy(image.begin(), image.end(), t.data.begin());
    const int label[] = {condition};
    return discriminator_scores(discriminator, t, label, num_classes, false).front();
}

double discriminator_loss(nn::Network& discriminator, const Batch& real_non_source,
                          const Batch& real_source_flipped, const nn::Tensor& fake, int target, int num_classes,
                          bool accumulate_grad) {
    require_nonempty(real_non_source.images, "non-source");
    require_nonempty(real_source_flipped.images, "source");
    require_nonempty(fake, "fake");
    const std::vector<int> fake_labels(fake.n, target);
    double loss = batch_term(discriminator, condition_images(real_non_source.images, real_non_source.labels, num_classes),
                             true, accumulate_grad, nullptr);
    loss += batch_term(discriminator,
                       condition_images(real_source_flipped.images, real_source_flipped.labels, num_classes), true,
                       accumulate_grad, nullptr);
    loss += batch_term(discriminator, condition_images(fake, fake_labels, num_classes), false, accumulate_grad,
                       nullptr);
    return loss;
}

double generator_loss(nn::Network& discriminator, nn::Network& generator, const nn::Tensor& z, int target,
                      int num_classes, GeneratorLossForm form, bool accumulate_grad) {
    require_nonempty(z, "latent");
    const nn::Tensor fake = generator.forward(generator_input(z, target, num_classes), true);
    const std::vector<int> labels(fake.n, target);
    // Non-saturating: fakes scored as "real"; literal form: fakes scored as "fake".
    const bool as_real = form == GeneratorLossForm::nonsaturating;
    nn::Tensor dinput;
    const double loss = batch_term(discriminator, condition_images(fake, labels, num_classes), as_real,
                                   accumulate_grad, &dinput);
    if (accumulate_grad) {
        // Keep only the image channels; the label planes are constants.
        nn::Tensor dfake(fake.n, fake.shape);
        for (int i = 0; i < fake.n; ++i) std::copy_n(dinput.sample(i), fake.sample_size(), dfake.sample(i));
        generator.backward(dfake);
    }
    return loss;
}

GanState train_psg_state(const data::Dataset& local_set, const PsgConfig& config, std::span<const int> checkpoints,
                         const CheckpointFn& on_checkpoint) {
    config.validate();
    if (config.source >= local_set.num_classes || config.target >= local_set.num_classes || config.source < 0 ||
        config.target < 0)
        throw InvalidConfig("train_psg: source/target label outside the dataset's classes");
    std::vector<std::size_t> source_idx, other_idx;
    for (std::size_t i = 0; i < local_set.size(); ++i)
        (local_set.samples[i].label == config.source ? source_idx : other_idx).push_back(i);
    if (source_idx.empty()) throw InvalidDataset("train_psg: no source-class samples in the local set");
    if (other_idx.empty()) throw InvalidDataset("train_psg: no non-source samples in the local set");

    const GanArch arch{local_set.image_shape, local_set.num_classes, config.noise_dim, config.arch_scale};
    GanState state = make_gan_state(arch, config);
    Rng rng(derive_seed(config.seed, {stream::psg}));
    const int b = config.batch_size;
    const int classes = local_set.num_classes;

    auto draw = [&](const std::vector<std::size_t>& pool) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        std::vector<std::size_t> idx(b);
        for (auto& i : idx) i = pool[pick(rng)];
        return idx;
    };

    for (int n = 1; n <= config.iterations; ++n) {
        // Real data; source labels flipped to the target.
        const auto s_idx = draw(source_idx);
        std::vector<data::LabeledSample> source_batch;
        for (auto i : s_idx) source_batch.push_back(local_set.samples[i]);
        const auto flipped = flip_source_labels(source_batch, config.source, config.target);
        Batch real_source{data::to_tensor(local_set, s_idx), {}};
        for (const auto& s : flipped) real_source.labels.push_back(s.label);
        const auto o_idx = draw(other_idx);
        Batch real_other{data::to_tensor(local_set, o_idx), data::labels_of(local_set, o_idx)};

        // Discriminator step on detached fakes.
        const auto z = sample_noise(config.noise, b, config.noise_dim, rng());
        const nn::Tensor fake = state.generator.forward(generator_input(z, config.target, classes), true);
        state.discriminator.zero_grad();
        const double d_loss =
            discriminator_loss(state.discriminator, real_other, real_source, fake, config.target, classes, true);
        if (!std::isfinite(d_loss))
            throw NumericDivergence("train_psg: non-finite discriminator loss at iteration " + std::to_string(n));
        state.discriminator_opt.step(state.discriminator.params(), state.discriminator.grads());

        // Generator step with resampled noise.
        const auto z2 = sample_noise(config.noise, b, config.noise_dim, rng());
        state.generator.zero_grad();
        const double g_loss = generator_loss(state.discriminator, state.generator, z2, config.target, classes,
                                             config.generator_loss_form, true);
        if (!std::isfinite(g_loss))
            throw NumericDivergence("train_psg: non-finite generator loss at iteration " + std::to_string(n));
        state.generator_opt.step(state.generator.params(), state.generator.grads());
        state.iteration = n;

        if (on_checkpoint && std::find(checkpoints.begin(), checkpoints.end(), n) != checkpoints.end())
            on_checkpoint(to_poison_generator(state, config.target));
    }
    return state;
}

PoisonGenerator train_psg(const data::Dataset& local_set, const PsgConfig& config) {
    return to_poison_generator(train_psg_state(local_set, config), config.target);
}

PoisonGenerator to_poison_generator(const GanState& state, int target_label) {
    PoisonGenerator g;
    g.arch = state.arch;
    g.generator_params = ParamVector(state.generator.params());
    g.generator_state = state.generator.state();
    g.target_label = target_label;
    g.noise_dim = state.arch.noise_dim;
    g.training_iterations = state.iteration;
    g.id = "psg-t" + std::to_string(target_label) + "-n" + std::to_string(state.iteration);
    return g;
}

data::PoisonedDataset generate_poison_set(const PoisonGenerator& generator, int count, std::uint64_t seed) {
    if (count < 0) throw InvalidConfig("generate_poison_set: count must be >= 0");
    data::PoisonedDataset out;
    out.target_label = generator.target_label;
    out.generator_id = generator.id;
    out.generator_iterations = generator.training_iterations;
    if (count == 0) return out;

    nn::Network g = build_generator(generator.arch);
    if (generator.generator_params.dim() != g.params().size() || generator.generator_state.size() != g.state().size())
        throw ShapeError("generate_poison_set: generator parameters do not match the architecture");
    g.params() = generator.generator_params.values();
    g.state() = generator.generator_state;

    const auto z = sample_noise(NoiseDist::standard_normal, count, generator.noise_dim, seed);
    for (int start = 0; start < count; start += kGenerateChunk) {
        const int n = std::min(kGenerateChunk, count - start);
        nn::Tensor chunk(n, z.shape);
        std::copy_n(z.sample(start), static_cast<std::size_t>(n) * z.sample_size(), chunk.data.begin());
        const nn::Tensor images =
            g.forward(generator_input(chunk, generator.target_label, generator.arch.num_classes), false);
        for (int i = 0; i < n; ++i) {
            data::LabeledSample s;
            s.id = -1 - static_cast<std::int64_t>(start + i);
            s.label = generator.target_label;
            s.pixels.assign(images.sample(i), images.sample(i) + images.sample_size());
            for (auto& p : s.pixels) p = std::clamp(p, -1.0, 1.0);
            out.samples.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace fplab::psg
