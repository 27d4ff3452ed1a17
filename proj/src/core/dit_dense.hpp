#pragma once

// Dense batched forward/backward over full patch grids. This is the training
// path and the reference "no index machinery" path for the plain sampler.

#include <cstdint>
#include <span>
#include <vector>

#include "dit.hpp"

namespace ras {

struct DenseLayerTape {
    Matrix h_in, n1, u, mod, q, k, v, probs, o, a, h1, n2, u2, z, g, m;
    std::vector<float> inv_rms1, inv_rms2;
};

struct DenseTape {
    std::size_t batch = 0;
    Matrix patches, feats, t1, a1, c, sc;
    std::vector<std::int32_t> classes;
    std::vector<DenseLayerTape> layers;
    Matrix h_last, nf, fm, uf;
    std::vector<float> inv_rmsf;
};

// patches: (B*P) x patch_dim, sample-major with patches in grid order.
// classes[b] < 0 means no class (unconditional models only).
// Returns (B*P) x patch_dim predictions. Activations are recorded when
// `tape` is non-null.
Matrix dense_forward(const DitModel& model, const Matrix& patches, std::span<const float> sigmas,
                     std::span<const std::int32_t> classes, DenseTape* tape = nullptr);

// Accumulates d(loss)/d(weights) into `grads` given d(loss)/d(output).
void dense_backward(const DitModel& model, const DenseTape& tape, const Matrix& d_out,
                    DitWeights& grads);

// Convenience single-sample dense prediction as an image.
Image dense_predict(const DitModel& model, const Image& sample, float sigma, std::int32_t class_id);

}  // namespace ras
