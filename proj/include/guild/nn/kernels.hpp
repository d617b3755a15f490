#pragma once

#include <cstdint>
#include <cstddef>

// Raw float32 kernels shared by the autodiff tape and the gradient-free
// forward path, so both produce bit-identical values.

namespace guild::nn::kern {

constexpr float kLayerNormEps = 1e-5f;
constexpr float kProbFloor = 1e-8f;
extern const float kLogProbFloor;  // std::log(kProbFloor)

float sigmoidf(float x);
float siluf(float x);

// y[m] = W[m,n] * x[n]
void matvec(const float* W, int m, int n, const float* x, float* y);
// dx[n] += W^T dy
void matvec_bwd_x(const float* W, int m, int n, const float* dy, float* dx);
// dW[m,n] += dy outer x
void matvec_bwd_w(float* dW, int m, int n, const float* dy, const float* x);

void silu(const float* x, int n, float* y);
void silu_bwd(const float* x, int n, const float* dy, float* dx);

// Saves xhat and inv_std for the backward pass.
void layer_norm(const float* x, int n, const float* gain, const float* bias,
                float* y, float* xhat, float* inv_std);
void layer_norm_bwd(const float* xhat, float inv_std, int n, const float* gain,
                    const float* dy, float* dx, float* dgain, float* dbias);

// p sums to 1 over the mask and is exactly zero elsewhere. At least one mask
// bit must be set (callers enforce).
void masked_softmax(const float* x, const uint8_t* mask, int n, float* p);
void masked_softmax_bwd(const float* p, const uint8_t* mask, int n,
                        const float* dp, float* dx);

// Log-probabilities over the mask, floored at kLogProbFloor; off-mask entries
// are set to kLogProbFloor as well. praw holds the unfloored probabilities
// needed by the backward pass.
void masked_log_softmax(const float* x, const uint8_t* mask, int n, float* lp,
                        float* praw);
void masked_log_softmax_bwd(const float* lp, const float* praw,
                            const uint8_t* mask, int n, const float* dlp,
                            float* dx);

struct GruDims {
  int input;
  int hidden;
};

// One GRU step: gates r,z, candidate c, new hidden h2.
//   r = sigmoid(Wih_r x + bih_r + Whh_r h + bhh_r)
//   z = sigmoid(Wih_z x + bih_z + Whh_z h + bhh_z)
//   c = tanh(Wih_c x + bih_c + r * (Whh_c h + bhh_c))
//   h2 = (1 - z) * c + z * h
// Wih is [3H, E] with rows packed r,z,c; Whh is [3H, H]; biases are [3H].
// scratch must hold 4H floats and receives r,z,c,hlin for the backward pass.
void gru_step(const GruDims& d, const float* Wih, const float* bih,
              const float* Whh, const float* bhh, const float* x,
              const float* h, float* h2, float* scratch);
void gru_step_bwd(const GruDims& d, const float* Wih, const float* Whh,
                  const float* x, const float* h, const float* scratch,
                  const float* dh2, float* dx, float* dh, float* dWih,
                  float* dbih, float* dWhh, float* dbhh);

}  // namespace guild::nn::kern
