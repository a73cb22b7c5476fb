#pragma once

#include <random>

#include "isdet/layers.hpp"
#include "isdet/tensor.hpp"
#include "isdet/trace.hpp"

namespace isdet {

/// Channel plan of the instance-specific branch: a compression stage narrows
/// c to c1 = ⌊c/s⌋·3 (one third each for Q, K, V), attention runs at
/// c2 = ⌊c/s⌋, and the expansion stage restores c3 = c.
struct IsbConfig {
  int64_t channels = 64;  // c
  int64_t ratio = 8;      // s
  int64_t patch = 4;      // K

  int64_t c1() const { return (channels / ratio) * 3; }
  int64_t c2() const { return channels / ratio; }
  int64_t c3() const { return channels; }
  void validate() const;
};

struct IsbChannels {
  int64_t c1, c2, c3;
};

IsbChannels derive_channels(int64_t channels, int64_t ratio);

/// Instance-specific branch: 1×1 Conv-IN-SiLU compression, patch-channel
/// reconstruction, full-channel global self-attention, reassembly, and a 3×3
/// Conv-IN-SiLU expansion (CIS) for cross-pixel sharing.
class IsbBranch {
 public:
  IsbBranch(IsbConfig cfg, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, ShapeTrace* trace = nullptr);
  std::vector<Tensor> parameters() const;

  IsbConfig cfg;
  ConvNormAct compress;  // 1×1, c -> c1
  ConvNormAct expand;    // 3×3, c2 -> c
};

/// Two 3×3 Conv-BN-SiLU stages with an optional identity shortcut.
class Bottleneck {
 public:
  Bottleneck(int64_t channels, bool shortcut, std::mt19937_64& rng);
  Tensor forward(const Tensor& x);
  std::vector<Tensor> parameters() const;
  void set_mode(Mode mode);

  int64_t channels;
  bool shortcut;
  ConvNormAct cv1, cv2;
};

/// Bottleneck with the instance-specific branch fused in by elementwise
/// addition; the branch taps the block input.
class IsbBottleneck {
 public:
  IsbBottleneck(IsbConfig cfg, bool shortcut, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, ShapeTrace* trace = nullptr);
  std::vector<Tensor> parameters() const;
  void set_mode(Mode mode);

  Bottleneck main;
  IsbBranch branch;
};

}  // namespace isdet
