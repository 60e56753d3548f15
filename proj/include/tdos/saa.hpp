#pragma once

// Semantically augmented attention: inject Gaussian noise into the CLS query
// row, recompute attention, and blend the result back in on the output rows
// selected by a binary token mask. A single stochastic gate (shared across
// every augmented layer of one forward pass) turns the whole mechanism on or
// off; train-time only.

#include <string>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/grad.hpp"
#include "tdos/mask.hpp"
#include "tdos/rng.hpp"

namespace tdos {

struct SAAConfig {
  double lambda = 0.5;      // noise strength on the CLS query row
  double sigma = 1.0;       // stddev of the injected Gaussian
  bool first_layer = true;  // augment the first encoder block
  bool last_layer = true;   // augment the last encoder block
};

// Per-token blend weights (CLS first, then patch tokens), each 0 or 1.
struct TokenMask {
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
};

// Token t is selected when any pixel of its patch is set; the CLS slot is
// always 0.
inline TokenMask downsample_mask(const BinaryMask& m, int patch) {
  if (patch < 1 || m.h % patch != 0 || m.w % patch != 0)
    throw DimensionError("downsample_mask: patch " + std::to_string(patch) +
                         " does not tile " + std::to_string(m.h) + "x" +
                         std::to_string(m.w));
  const int gh = m.h / patch, gw = m.w / patch;
  TokenMask out;
  out.weights.assign(1 + static_cast<std::size_t>(gh) * gw, 0.0);
  for (int gi = 0; gi < gh; ++gi)
    for (int gj = 0; gj < gw; ++gj) {
      bool any = false;
      for (int di = 0; di < patch && !any; ++di)
        for (int dj = 0; dj < patch && !any; ++dj)
          any = m.at(gi * patch + di, gj * patch + dj);
      if (any) out.weights[1 + static_cast<std::size_t>(gi) * gw + gj] = 1.0;
    }
  return out;
}

// One augmented attention layer. `gate` is the shared per-pass uniform draw:
// below 0.5 the augmented path is active, otherwise the plain attention
// output is returned untouched. Row 0 (CLS) always keeps the plain output.
inline Tensor saa_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const TokenMask& mask, double lambda, double sigma,
                            double gate, Rng& rng) {
  Tensor a_origin = attention(q, k, v);
  if (gate >= 0.5) return a_origin;

  const auto qs = q.shape();
  if (qs.size() != 2)
    throw DimensionError("saa_attention: Q must be rank-2");
  const int t = qs[0], d = qs[1];
  if (mask.size() != static_cast<std::size_t>(t))
    throw DimensionError("saa_attention: mask size " +
                         std::to_string(mask.size()) + " vs " +
                         std::to_string(t) + " tokens");
  for (double w : mask.weights)
    if (w != 0.0 && w != 1.0)
      throw std::invalid_argument("saa_attention: mask weights must be 0/1");

  // Perturb the CLS token feature: the same draw lands on row 0 of Q, K and
  // V, so patch tokens see the noised global token through keys and values.
  std::vector<double> noise(static_cast<std::size_t>(t) * d, 0.0);
  for (int j = 0; j < d; ++j) noise[j] = lambda * rng.normal(0.0, sigma);
  Tensor delta = Tensor::make({t, d}, std::move(noise));
  Tensor a_noise = attention(add(q, delta), add(k, delta), add(v, delta));

  std::vector<double> m = mask.weights;
  m[0] = 0.0;
  std::vector<double> inv(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) inv[i] = 1.0 - m[i];
  return add(scale_rows(a_noise, m), scale_rows(a_origin, inv));
}

inline Tensor saa_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const TokenMask& mask, const SAAConfig& cfg,
                            double gate, Rng& rng) {
  return saa_attention(q, k, v, mask, cfg.lambda, cfg.sigma, gate, rng);
}

}  // namespace tdos
