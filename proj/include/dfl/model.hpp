#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfl/autodiff.hpp"
#include "dfl/optim.hpp"

namespace dfl {

enum class StreamMode { Both, Rgb, Srm };

std::string to_string(StreamMode m);
StreamMode stream_mode_from_string(const std::string& s);

struct ModelConfig {
    std::size_t image_size = 64;  // square input, H = W
    std::size_t grid = 8;         // square patch grid, Hp = Wp
    std::array<std::size_t, 3> entry_widths{8, 12, 16};
    std::array<std::size_t, 3> middle_widths{16, 16, 16};
    std::size_t exit_width = 16;
    std::size_t embed_dim = 8;  // embedding dimension of the patch-consistency transform
    std::size_t bilinear_m = 64;
    std::size_t bilinear_n = 128;
    int n_cmce = 3;  // CMCE after the first n entry blocks
    int n_lfga = 3;  // LFGA after the first n middle blocks
    StreamMode streams = StreamMode::Both;
    bool use_cmce = true;
    bool use_lfga = true;
    bool use_mpff = true;
    std::uint64_t seed = 7;

    // Throws Config errors for inconsistent settings.
    void validate() const;

    // Stride of each block in path order entry1..3, middle1..3.
    std::array<int, 6> block_strides() const;

    // 16x16 input, 2x2 grid, narrow widths; used for gradient checks.
    static ModelConfig micro();
    // 19x19 grid with m=2048, n=4096 on a 152x152 input.
    static ModelConfig paper_scale();
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

namespace nn {

struct CmceOutput {
    Var rgb;
    Var srm;
    Var corr;  // [1,h,w]
};

// Cross-modality consistency: Corr = cos(F_r, F_h) per position,
// F_r' = ReLU(F_r + Corr*F_h), F_h' = ReLU(F_h + Corr*F_r).
CmceOutput cmce_step(Var f_r, Var f_h);
Var cmce_fuse(Var f_r, Var f_h);

// Att[i,j] = softmax_j(<g(F_l)_i, g(F_l)_j>), no temperature. g is a 1x1
// convolution weight [c,c,1,1] without bias.
Var lfga_attention(Var f_l, Var g_weight);

// F_c* = ReLU(reshape(h(F_c) aggregated by Att) + F_c): position i receives
// sum_j Att[i,j] * h(F_c)_j.
Var lfga_apply(Var f_c, Var att, Var h_weight);

struct PatchEmbedding {
    Var patch_w, patch_b;    // theta on intermediate features
    Var anchor_w, anchor_b;  // theta on F_l
};

// Intra-patch consistency of one intermediate against F_l: the intermediate
// is zero-padded to a multiple of the grid, embedded, and every element j of
// patch k gives tanh(<theta(p_k^j), theta(f_l^k)> / c). Output [s*s,Hp,Wp].
Var patch_consistency(Var f_l, Var intermediate, const PatchEmbedding& theta, std::size_t embed_dim);

// Localization head: consistency maps of all intermediates concatenated with
// F_l, then a 1x1 convolution to one logit per patch.
Var mpff_loc(Var f_l, const std::vector<Var>& intermediates, const std::vector<PatchEmbedding>& thetas,
             Var head_w, Var head_b, std::size_t embed_dim);

struct BilinearParams {
    Var p;     // [n,m]
    Var u;     // [c_s,m]
    Var v;     // [c*,m]
    Var bias;  // [n,h*,w*]
};

// Low-rank bilinear fusion per location: P (U^T f_s * V^T f_c) + B.
// Shallow features are average-pooled to F_c's size and concatenated; an
// empty list falls back to f_s = f_c.
Var bilinear_fuse(Var f_c, const std::vector<Var>& shallow, const BilinearParams& params);

// Global average pool, then affine map to a single logit.
Var classification_head(Var features, Var w, Var b);

}  // namespace nn

struct ForwardResult {
    Var cls_logit;   // [1]
    Var loc_logits;  // [1,Hp,Wp]
    std::map<std::string, Var> taps;
};

class TwoStreamModel {
public:
    explicit TwoStreamModel(ModelConfig cfg);
    // Adopts existing parameters; names and shapes must match `cfg`.
    TwoStreamModel(ModelConfig cfg, ParamStore params);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Expected parameter names and shapes for a configuration.
    static std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

    ForwardResult forward(Tape& tape, const ParamBinding& bound, const Tensor& image) const;

    // Names of the taps a forward exposes.
    std::vector<std::string> tap_names() const;

private:
    ModelConfig cfg_;
    ParamStore params_;
};

}  // namespace dfl
