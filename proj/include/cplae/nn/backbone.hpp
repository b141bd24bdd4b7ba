#pragma once

#include <string>
#include <vector>

#include "cplae/core/conv.hpp"
#include "cplae/core/error.hpp"
#include "cplae/core/grad_check.hpp"
#include "cplae/core/ops.hpp"
#include "cplae/nn/init.hpp"

namespace cplae::nn {

enum class Mode { train, eval };

struct BackboneConfig {
  std::size_t block_count = 4;
  std::vector<std::size_t> channels{64, 64, 64, 64};
  std::size_t input_channels = 3;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  bool use_batchnorm = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  std::size_t embedding_dim() const { return channels.empty() ? 0 : channels.back(); }

  void validate() const {
    if (block_count == 0) throw ConfigError("backbone.block_count must be >= 1");
    if (channels.size() != block_count)
      throw ConfigError("backbone.channels has " + std::to_string(channels.size()) + " entries, expected block_count = " +
                        std::to_string(block_count));
    for (auto c : channels)
      if (c == 0) throw ConfigError("backbone.channels entries must be positive");
    if (input_channels == 0) throw ConfigError("backbone input channels must be positive");
    std::size_t h = input_height, w = input_width;
    for (std::size_t b = 0; b < block_count; ++b) {
      h /= 2;
      w /= 2;
      if (h == 0 || w == 0)
        throw ConfigError("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                          " underflows after " + std::to_string(b + 1) + " of " + std::to_string(block_count) +
                          " 2x2 poolings");
    }
  }
};

/// Conv4-style embedding network f_φ: per block conv3×3 (pad 1) → optional
/// batchnorm → relu → maxpool 2×2, then global average pooling to [B×D].
template <typename T>
class Backbone {
 public:
  struct Block {
    Tensor<T> weight, bias, gamma, beta, running_mean, running_var;
  };

  Backbone() = default;

  Backbone(BackboneConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    std::size_t in = config_.input_channels;
    for (std::size_t b = 0; b < config_.block_count; ++b) {
      const std::size_t out = config_.channels[b];
      Block blk;
      blk.weight = kaiming_uniform<T>({out, in, 3, 3}, in * 9, kReluGain, rng);
      blk.bias = Tensor<T>::zeros({out}, true);
      if (config_.use_batchnorm) {
        blk.gamma = Tensor<T>::full({out}, T(1), true);
        blk.beta = Tensor<T>::zeros({out}, true);
        blk.running_mean = Tensor<T>::zeros({out});
        blk.running_var = Tensor<T>::full({out}, T(1));
      }
      blocks_.push_back(std::move(blk));
      in = out;
    }
  }

  const BackboneConfig& config() const { return config_; }
  std::size_t embedding_dim() const { return config_.embedding_dim(); }

  /// images [B×C×H×W] -> [B×D]. Train mode updates batchnorm running stats.
  Tensor<T> forward(const Tensor<T>& images, Mode mode) const {
    if (images.rank() != 4 || images.dim(1) != config_.input_channels || images.dim(2) != config_.input_height ||
        images.dim(3) != config_.input_width)
      throw DimensionError("backbone expects [B×" + std::to_string(config_.input_channels) + "×" +
                           std::to_string(config_.input_height) + "×" + std::to_string(config_.input_width) +
                           "], got " + shape_str(images.shape()));
    Tensor<T> x = images;
    for (const auto& blk : blocks_) {
      x = conv2d(x, blk.weight, blk.bias, 1, 1);
      // Handles alias the stored buffers; train mode writes through them.
      Tensor<T> running_mean = blk.running_mean, running_var = blk.running_var;
      if (config_.use_batchnorm)
        x = batchnorm2d(x, blk.gamma, blk.beta, running_mean, running_var, mode == Mode::train,
                        static_cast<T>(config_.bn_momentum), static_cast<T>(config_.bn_eps));
      x = maxpool2d(relu(x), 2);
    }
    return global_avg_pool(x);
  }

  NamedTensors<T> parameters(const std::string& prefix = "backbone") const {
    NamedTensors<T> out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const std::string p = prefix + ".block" + std::to_string(b) + ".";
      out.emplace_back(p + "conv.weight", blocks_[b].weight);
      out.emplace_back(p + "conv.bias", blocks_[b].bias);
      if (config_.use_batchnorm) {
        out.emplace_back(p + "bn.gamma", blocks_[b].gamma);
        out.emplace_back(p + "bn.beta", blocks_[b].beta);
      }
    }
    return out;
  }

  NamedTensors<T> buffers(const std::string& prefix = "backbone") const {
    NamedTensors<T> out;
    if (!config_.use_batchnorm) return out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const std::string p = prefix + ".block" + std::to_string(b) + ".";
      out.emplace_back(p + "bn.running_mean", blocks_[b].running_mean);
      out.emplace_back(p + "bn.running_var", blocks_[b].running_var);
    }
    return out;
  }

  std::vector<Block>& blocks() { return blocks_; }

 private:
  BackboneConfig config_;
  std::vector<Block> blocks_;
};

}  // namespace cplae::nn
