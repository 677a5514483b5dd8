#include "lightvit/gradcheck.hpp"

#include <cmath>

#include "lightvit/init.hpp"
#include "lightvit/model.hpp"

namespace lightvit {

double grad_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckResult gradcheck_model(const ModelConfig& cfg, uint64_t seed, double step,
                                int64_t resolution) {
  GradTape<double> tape;
  Model<double> model = Model<double>::build(cfg, seed, &tape);

  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<double> img(static_cast<size_t>(3 * resolution * resolution));
  for (auto& v : img) v = rng.normal() * 0.5;
  Tensor<double> image = Tensor<double>::from_data({3, resolution, resolution}, std::move(img));

  std::vector<double> probe(static_cast<size_t>(cfg.num_classes));
  for (auto& v : probe) v = rng.normal();
  Tensor<double> probe_t = Tensor<double>::from_data({cfg.num_classes}, probe);

  // Analytic pass: one taped forward and backward of sum(logits * probe).
  Tensor<double> loss = sum_all(mul(model.classify(image), probe_t));
  backward(loss);

  // Numeric passes re-run the same graph without recording.
  tape.set_recording(false);
  auto loss_value = [&]() {
    Tensor<double> logits = model.classify(image);
    double acc = 0.0;
    for (int64_t i = 0; i < logits.numel(); ++i) acc += logits.data()[i] * probe[i];
    return acc;
  };

  GradCheckResult result;
  for (const auto& group : model.parameters()) {
    Tensor<double> handle = group.tensor;  // shares the parameter node
    auto& values = handle.data();
    const auto& grads = handle.grad();
    double worst = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_value();
      values[i] = saved - step;
      const double down = loss_value();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, grad_rel_err(grads[i], numeric));
    }
    result.rows.push_back(GradCheckRow{group.name, worst});
    result.max_rel_err = std::max(result.max_rel_err, worst);
  }
  tape.set_recording(true);
  return result;
}

}  // namespace lightvit
