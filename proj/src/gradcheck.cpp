#include "anchorcap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "anchorcap/trainer.hpp"

namespace anchorcap {

std::string parameter_group(const std::string& path) {
  const auto first = path.find('.');
  if (first == std::string::npos) return path;
  const auto second = path.find('.', first + 1);
  return second == std::string::npos ? path : path.substr(0, second);
}

GradcheckReport check_gradients(nn::ParameterStore& params, const std::function<double()>& loss, int coordinates,
                                std::uint64_t seed, double step) {
  std::vector<std::pair<std::string, nn::Parameter*>> tensors;
  for (auto& [path, p] : params.items()) {
    if (p.value.size() > 0) tensors.emplace_back(path, &p);
  }
  GradcheckReport report;
  if (tensors.empty()) return report;
  std::mt19937_64 rng(seed);
  for (int c = 0; c < coordinates; ++c) {
    auto& [path, p] = tensors[static_cast<std::size_t>(c) % tensors.size()];
    const auto index = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p->value.size()));
    double& x = p->value.data()[index];
    const double saved = x;
    x = saved + step;
    const double up = loss();
    x = saved - step;
    const double down = loss();
    x = saved;

    GradcheckEntry e;
    e.param = path;
    e.index = index;
    e.analytic = p->grad.data()[index];
    e.numeric = (up - down) / (2.0 * step);
    e.rel_error = std::abs(e.analytic - e.numeric) / std::max(1.0, std::abs(e.numeric));
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    ++report.group_counts[parameter_group(path)];
    report.entries.push_back(e);
  }
  return report;
}

GradcheckReport gradcheck_tiny(std::uint64_t seed, int coordinates, GraphStrategy strategy) {
  ModelConfig config = ModelConfig::tiny();
  config.strategy = strategy;
  config.init_seed = seed;

  SynthConfig synth = SynthConfig::defaults();
  synth.n_scenes = 1;
  synth.objects_per_scene = config.features.max_objects;
  synth.tokens_per_scene = config.features.max_tokens;
  synth.refs_per_scene = 3;
  synth.dims = config.features;
  const DatasetManifest data = generate_synthetic(synth, seed);
  const Scene& scene = data.scenes.front();

  AnchorCaptioner model(config, corpus_vocab(data, 1));
  const GroundTruthLabels gt = mine_ground_truth(scene, model.vocab(), config.max_caption);

  auto loss = [&] {
    nn::Tape tape(false);
    return model.training_forward(tape, scene, gt, 0).loss.total.scalar();
  };
  model.params().zero_grad();
  {
    nn::Tape tape;
    tape.backward(model.training_forward(tape, scene, gt, 0).loss.total);
  }
  return check_gradients(model.params(), loss, coordinates, seed);
}

}  // namespace anchorcap
