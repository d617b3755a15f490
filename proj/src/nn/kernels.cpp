#include "guild/nn/kernels.hpp"

#include <cmath>
#include <cstring>

namespace guild::nn::kern {

const float kLogProbFloor = std::log(kProbFloor);

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }
float siluf(float x) { return x * sigmoidf(x); }

void matvec(const float* W, int m, int n, const float* x, float* y) {
  for (int i = 0; i < m; ++i) {
    const float* row = W + size_t(i) * size_t(n);
    float acc = 0.0f;
    for (int j = 0; j < n; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_bwd_x(const float* W, int m, int n, const float* dy, float* dx) {
  for (int i = 0; i < m; ++i) {
    const float* row = W + size_t(i) * size_t(n);
    float g = dy[i];
    if (g == 0.0f) continue;
    for (int j = 0; j < n; ++j) dx[j] += g * row[j];
  }
}

void matvec_bwd_w(float* dW, int m, int n, const float* dy, const float* x) {
  for (int i = 0; i < m; ++i) {
    float* row = dW + size_t(i) * size_t(n);
    float g = dy[i];
    if (g == 0.0f) continue;
    for (int j = 0; j < n; ++j) row[j] += g * x[j];
  }
}

void silu(const float* x, int n, float* y) {
  for (int i = 0; i < n; ++i) y[i] = siluf(x[i]);
}

void silu_bwd(const float* x, int n, const float* dy, float* dx) {
  for (int i = 0; i < n; ++i) {
    float s = sigmoidf(x[i]);
    dx[i] += dy[i] * s * (1.0f + x[i] * (1.0f - s));
  }
}

void layer_norm(const float* x, int n, const float* gain, const float* bias,
                float* y, float* xhat, float* inv_std) {
  float mean = 0.0f;
  for (int i = 0; i < n; ++i) mean += x[i];
  mean /= float(n);
  float var = 0.0f;
  for (int i = 0; i < n; ++i) {
    float d = x[i] - mean;
    var += d * d;
  }
  var /= float(n);
  float is = 1.0f / std::sqrt(var + kLayerNormEps);
  *inv_std = is;
  for (int i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mean) * is;
    y[i] = gain[i] * xhat[i] + bias[i];
  }
}

void layer_norm_bwd(const float* xhat, float inv_std, int n, const float* gain,
                    const float* dy, float* dx, float* dgain, float* dbias) {
  float sum_dxhat = 0.0f;
  float sum_dxhat_xhat = 0.0f;
  for (int i = 0; i < n; ++i) {
    float dxh = dy[i] * gain[i];
    sum_dxhat += dxh;
    sum_dxhat_xhat += dxh * xhat[i];
    dgain[i] += dy[i] * xhat[i];
    dbias[i] += dy[i];
  }
  float mean_dxhat = sum_dxhat / float(n);
  float mean_dxhat_xhat = sum_dxhat_xhat / float(n);
  for (int i = 0; i < n; ++i) {
    float dxh = dy[i] * gain[i];
    dx[i] += inv_std * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  }
}

void masked_softmax(const float* x, const uint8_t* mask, int n, float* p) {
  float mx = -3.4e38f;
  for (int i = 0; i < n; ++i)
    if (mask[i] && x[i] > mx) mx = x[i];
  float total = 0.0f;
  for (int i = 0; i < n; ++i) {
    if (mask[i]) {
      p[i] = std::exp(x[i] - mx);
      total += p[i];
    } else {
      p[i] = 0.0f;
    }
  }
  float inv = 1.0f / total;
  for (int i = 0; i < n; ++i)
    if (mask[i]) p[i] *= inv;
}

void masked_softmax_bwd(const float* p, const uint8_t* mask, int n,
                        const float* dp, float* dx) {
  float s = 0.0f;
  for (int i = 0; i < n; ++i)
    if (mask[i]) s += dp[i] * p[i];
  for (int i = 0; i < n; ++i)
    if (mask[i]) dx[i] += p[i] * (dp[i] - s);
}

void masked_log_softmax(const float* x, const uint8_t* mask, int n, float* lp,
                        float* praw) {
  float mx = -3.4e38f;
  for (int i = 0; i < n; ++i)
    if (mask[i] && x[i] > mx) mx = x[i];
  float total = 0.0f;
  for (int i = 0; i < n; ++i) {
    if (mask[i]) {
      praw[i] = std::exp(x[i] - mx);
      total += praw[i];
    } else {
      praw[i] = 0.0f;
    }
  }
  float logz = std::log(total);
  float inv = 1.0f / total;
  for (int i = 0; i < n; ++i) {
    if (mask[i]) {
      float v = x[i] - mx - logz;
      lp[i] = v < kLogProbFloor ? kLogProbFloor : v;
      praw[i] *= inv;
    } else {
      lp[i] = kLogProbFloor;
    }
  }
}

void masked_log_softmax_bwd(const float* lp, const float* praw,
                            const uint8_t* mask, int n, const float* dlp,
                            float* dx) {
  // Entries clamped at the floor pass no gradient.
  float s = 0.0f;
  for (int i = 0; i < n; ++i)
    if (mask[i] && lp[i] > kLogProbFloor) s += dlp[i];
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    float g = lp[i] > kLogProbFloor ? dlp[i] : 0.0f;
    dx[i] += g - praw[i] * s;
  }
}

void gru_step(const GruDims& d, const float* Wih, const float* bih,
              const float* Whh, const float* bhh, const float* x,
              const float* h, float* h2, float* scratch) {
  int H = d.hidden;
  int E = d.input;
  float* r = scratch;
  float* z = scratch + H;
  float* c = scratch + 2 * H;
  float* hlin = scratch + 3 * H;

  for (int i = 0; i < H; ++i) {
    const float* wir = Wih + size_t(i) * E;
    const float* wiz = Wih + size_t(H + i) * E;
    const float* wic = Wih + size_t(2 * H + i) * E;
    float ar = bih[i], az = bih[H + i], ac = bih[2 * H + i];
    for (int j = 0; j < E; ++j) {
      float xj = x[j];
      ar += wir[j] * xj;
      az += wiz[j] * xj;
      ac += wic[j] * xj;
    }
    const float* whr = Whh + size_t(i) * H;
    const float* whz = Whh + size_t(H + i) * H;
    const float* whc = Whh + size_t(2 * H + i) * H;
    float br = bhh[i], bz = bhh[H + i], bc = bhh[2 * H + i];
    for (int j = 0; j < H; ++j) {
      float hj = h[j];
      br += whr[j] * hj;
      bz += whz[j] * hj;
      bc += whc[j] * hj;
    }
    float ri = sigmoidf(ar + br);
    float zi = sigmoidf(az + bz);
    float ci = std::tanh(ac + ri * bc);
    r[i] = ri;
    z[i] = zi;
    c[i] = ci;
    hlin[i] = bc;
    h2[i] = (1.0f - zi) * ci + zi * h[i];
  }
}

void gru_step_bwd(const GruDims& d, const float* Wih, const float* Whh,
                  const float* x, const float* h, const float* scratch,
                  const float* dh2, float* dx, float* dh, float* dWih,
                  float* dbih, float* dWhh, float* dbhh) {
  int H = d.hidden;
  int E = d.input;
  const float* r = scratch;
  const float* z = scratch + H;
  const float* c = scratch + 2 * H;
  const float* hlin = scratch + 3 * H;

  for (int i = 0; i < H; ++i) {
    float g = dh2[i];
    float dc = g * (1.0f - z[i]);
    float dz = g * (h[i] - c[i]);
    dh[i] += g * z[i];
    float dpre_c = dc * (1.0f - c[i] * c[i]);
    float dr = dpre_c * hlin[i];
    float dhlin = dpre_c * r[i];
    float dpre_r = dr * r[i] * (1.0f - r[i]);
    float dpre_z = dz * z[i] * (1.0f - z[i]);

    dbih[i] += dpre_r;
    dbih[H + i] += dpre_z;
    dbih[2 * H + i] += dpre_c;
    dbhh[i] += dpre_r;
    dbhh[H + i] += dpre_z;
    dbhh[2 * H + i] += dhlin;

    float* dwir = dWih + size_t(i) * E;
    float* dwiz = dWih + size_t(H + i) * E;
    float* dwic = dWih + size_t(2 * H + i) * E;
    const float* wir = Wih + size_t(i) * E;
    const float* wiz = Wih + size_t(H + i) * E;
    const float* wic = Wih + size_t(2 * H + i) * E;
    for (int j = 0; j < E; ++j) {
      float xj = x[j];
      dwir[j] += dpre_r * xj;
      dwiz[j] += dpre_z * xj;
      dwic[j] += dpre_c * xj;
      dx[j] += dpre_r * wir[j] + dpre_z * wiz[j] + dpre_c * wic[j];
    }
    float* dwhr = dWhh + size_t(i) * H;
    float* dwhz = dWhh + size_t(H + i) * H;
    float* dwhc = dWhh + size_t(2 * H + i) * H;
    const float* whr = Whh + size_t(i) * H;
    const float* whz = Whh + size_t(H + i) * H;
    const float* whc = Whh + size_t(2 * H + i) * H;
    for (int j = 0; j < H; ++j) {
      float hj = h[j];
      dwhr[j] += dpre_r * hj;
      dwhz[j] += dpre_z * hj;
      dwhc[j] += dhlin * hj;
      dh[j] += dpre_r * whr[j] + dpre_z * whz[j] + dhlin * whc[j];
    }
  }
}

}  // namespace guild::nn::kern
