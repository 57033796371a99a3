#pragma once

// Poison sample generator: a conditional GAN whose discriminator is shown
// source-class images paired with the target label as "real", so that the
// generator conditioned on the target label learns to emit source-like images.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fplab/data.hpp"
#include "fplab/nn.hpp"
#include "fplab/param_vector.hpp"

namespace fplab::psg {

enum class NoiseDist { standard_normal };

enum class GeneratorLossForm {
    /// -log D(G(z|t)|t)
    nonsaturating,
    /// -log(1 - D(G(z|t)|t)), the saturating form.
    literal_alg1,
};

struct PsgConfig {
    int iterations = 200;
    int batch_size = 32;
    int noise_dim = 16;
    NoiseDist noise = NoiseDist::standard_normal;
    int source = 0;
    int target = 1;
    double gen_lr = 2e-4;
    double disc_lr = 2e-4;
    double beta1 = 0.5;
    int arch_scale = 1;
    GeneratorLossForm generator_loss_form = GeneratorLossForm::nonsaturating;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Network geometry shared by generator and discriminator.
struct GanArch {
    nn::Shape image{1, 16, 16};
    int num_classes = 4;
    int noise_dim = 16;
    int arch_scale = 1;
};

/// Deconv/BN stack from a 1×1 latent+label input up to the image resolution, tanh output.
nn::Network build_generator(const GanArch& arch);
/// Conv/BN stack over image+label planes down to a single sigmoid score.
nn::Network build_discriminator(const GanArch& arch);

struct GanState {
    GanArch arch;
    nn::Network generator;
    nn::Network discriminator;
    nn::Adam generator_opt;
    nn::Adam discriminator_opt;
    int iteration = 0;
};

GanState make_gan_state(const GanArch& arch, const PsgConfig& config);

struct PoisonGenerator {
    GanArch arch;
    /// Trainable generator parameters.
    ParamVector generator_params;
    /// Batch-norm running statistics used at generation time.
    std::vector<double> generator_state;
    int target_label = 0;
    int noise_dim = 0;
    int training_iterations = 0;
    std::string id;
};

/// An image batch and its condition labels.
struct Batch {
    nn::Tensor images;
    std::vector<int> labels;
};

inline constexpr double kProbEps = 1e-7;

std::vector<data::LabeledSample> flip_source_labels(std::span<const data::LabeledSample> batch, int source,
                                                    int target);

/// b latent vectors shaped (b, noise_dim, 1, 1), i.i.d. N(0, 1).
nn::Tensor sample_noise(NoiseDist dist, int b, int noise_dim, std::uint64_t seed);

/// Appends one constant one-hot plane per class to every image.
nn::Tensor condition_images(const nn::Tensor& images, std::span<const int> labels, int num_classes);
/// Concatenates latent vectors with the one-hot label into (b, noise_dim + classes, 1, 1).
nn::Tensor generator_input(const nn::Tensor& z, int label, int num_classes);

/// Realness scores D(x|y) in (0, 1).
std::vector<double> discriminator_scores(nn::Network& discriminator, const nn::Tensor& images,
                                         std::span<const int> labels, int num_classes, bool training);
/// Single-image score in evaluation mode.
double discriminator_forward(nn::Network& discriminator, std::span<const double> image, int condition,
                             int num_classes);

/// Sum of the three batch-mean cross-entropy terms over (x_i, y_i), (x_s, t) and (x_fake, t).
/// With `accumulate_grad`, adds dL/dθ_D into discriminator.grads(). Each batch is a separate
/// training-mode forward pass.
double discriminator_loss(nn::Network& discriminator, const Batch& real_non_source,
                          const Batch& real_source_flipped, const nn::Tensor& fake, int target, int num_classes,
                          bool accumulate_grad);

/// Generator objective on G(z|t). With `accumulate_grad`, adds dL/dθ_G into generator.grads()
/// (the discriminator's gradient buffer is also written and should be treated as scratch).
double generator_loss(nn::Network& discriminator, nn::Network& generator, const nn::Tensor& z, int target,
                      int num_classes, GeneratorLossForm form, bool accumulate_grad);

using CheckpointFn = std::function<void(const PoisonGenerator&)>;

/// Runs the full adversarial loop and returns the final networks.
/// `on_checkpoint` fires after every iteration listed in `checkpoints`.
GanState train_psg_state(const data::Dataset& local_set, const PsgConfig& config,
                         std::span<const int> checkpoints = {}, const CheckpointFn& on_checkpoint = {});

PoisonGenerator train_psg(const data::Dataset& local_set, const PsgConfig& config);

PoisonGenerator to_poison_generator(const GanState& state, int target_label);

data::PoisonedDataset generate_poison_set(const PoisonGenerator& generator, int count, std::uint64_t seed);

}  // namespace fplab::psg
