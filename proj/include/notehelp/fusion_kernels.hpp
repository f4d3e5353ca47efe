#pragma once

// Batch loss and gradient for the fusion model.
//
// `parallel::` projects the keys and values once, splits the batch into
// fixed blocks of kFusionBlock examples processed under OpenMP, and adds the
// block partials in block order, so the result does not depend on the
// thread count. `reference::` is a direct serial transcription that
// re-projects the keys for every example.

#include <span>
#include <vector>

#include "notehelp/fusion.hpp"

namespace notehelp::kernels {

inline constexpr std::size_t kFusionBlock = 16;

namespace parallel {
double fusion_loss_grad(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                        std::span<const FusionExample> batch, LossWeights w, FusionModel* grad);
}  // namespace parallel

namespace reference {
double fusion_loss_grad(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                        std::span<const FusionExample> batch, LossWeights w, FusionModel* grad);
}  // namespace reference

}  // namespace notehelp::kernels
