// Adaptive explicit Runge-Kutta 8(5,3) pair of Dormand and Prince (DOP853),
// following the step-size control of Hairer & Wanner's reference code.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <type_traits>
#include <vector>

#include "amgs/error.hpp"

namespace amgs::ode {

struct Options {
  double rtol = 1e-12;
  double atol = 1e-12;
  double h_initial = 0.0;  // 0 selects a step automatically
  std::size_t max_steps = 2'000'000;
  std::vector<double>* steps_out = nullptr;  // accepted step sizes, appended
};

struct Stats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

namespace detail {
// clang-format off
inline constexpr double c2 = 0.526001519587677318785587544488e-01;
inline constexpr double c3 = 0.789002279381515978178381316732e-01;
inline constexpr double c4 = 0.118350341907227396726757197510e+00;
inline constexpr double c5 = 0.281649658092772603273242802490e+00;
inline constexpr double c6 = 0.333333333333333333333333333333e+00;
inline constexpr double c7 = 0.25e+00;
inline constexpr double c8 = 0.307692307692307692307692307692e+00;
inline constexpr double c9 = 0.651282051282051282051282051282e+00;
inline constexpr double c10 = 0.6e+00;
inline constexpr double c11 = 0.857142857142857142857142857142e+00;

inline constexpr double a21 = 5.26001519587677318785587544488e-2;
inline constexpr double a31 = 1.97250569845378994544595329183e-2;
inline constexpr double a32 = 5.91751709536136983633785987549e-2;
inline constexpr double a41 = 2.95875854768068491816892993775e-2;
inline constexpr double a43 = 8.87627564304205475450678981324e-2;
inline constexpr double a51 = 2.41365134159266685502369798665e-1;
inline constexpr double a53 = -8.84549479328286085344864962717e-1;
inline constexpr double a54 = 9.24834003261792003115737966543e-1;
inline constexpr double a61 = 3.7037037037037037037037037037e-2;
inline constexpr double a64 = 1.70828608729473871279604482173e-1;
inline constexpr double a65 = 1.25467687566822425016691814123e-1;
inline constexpr double a71 = 3.7109375e-2;
inline constexpr double a74 = 1.70252211019544039314978060272e-1;
inline constexpr double a75 = 6.02165389804559606850219397283e-2;
inline constexpr double a76 = -1.7578125e-2;
inline constexpr double a81 = 3.70920001185047927108779319836e-2;
inline constexpr double a84 = 1.70383925712239993810214054705e-1;
inline constexpr double a85 = 1.07262030446373284651809199168e-1;
inline constexpr double a86 = -1.53194377486244017527936158236e-2;
inline constexpr double a87 = 8.27378916381402288758473766002e-3;
inline constexpr double a91 = 6.24110958716075717114429577812e-1;
inline constexpr double a94 = -3.36089262944694129406857109825e0;
inline constexpr double a95 = -8.68219346841726006818189891453e-1;
inline constexpr double a96 = 2.75920996994467083049415600797e1;
inline constexpr double a97 = 2.01540675504778934086186788979e1;
inline constexpr double a98 = -4.34898841810699588477366255144e1;
inline constexpr double a101 = 4.77662536438264365890433908527e-1;
inline constexpr double a104 = -2.48811461997166764192642586468e0;
inline constexpr double a105 = -5.90290826836842996371446475743e-1;
inline constexpr double a106 = 2.12300514481811942347288949897e1;
inline constexpr double a107 = 1.52792336328824235832596922938e1;
inline constexpr double a108 = -3.32882109689848629194453265587e1;
inline constexpr double a109 = -2.03312017085086261358222928593e-2;
inline constexpr double a111 = -9.3714243008598732571704021658e-1;
inline constexpr double a114 = 5.18637242884406370830023853209e0;
inline constexpr double a115 = 1.09143734899672957818500254654e0;
inline constexpr double a116 = -8.14978701074692612513997267357e0;
inline constexpr double a117 = -1.85200656599969598641566180701e1;
inline constexpr double a118 = 2.27394870993505042818970056734e1;
inline constexpr double a119 = 2.49360555267965238987089396762e0;
inline constexpr double a1110 = -3.0467644718982195003823669022e0;
inline constexpr double a121 = 2.27331014751653820792359768449e0;
inline constexpr double a124 = -1.05344954667372501984066689879e1;
inline constexpr double a125 = -2.00087205822486249909675718444e0;
inline constexpr double a126 = -1.79589318631187989172765950534e1;
inline constexpr double a127 = 2.79488845294199600508499808837e1;
inline constexpr double a128 = -2.85899827713502369474065508674e0;
inline constexpr double a129 = -8.87285693353062954433549289258e0;
inline constexpr double a1210 = 1.23605671757943030647266201528e1;
inline constexpr double a1211 = 6.43392746015763530355970484046e-1;

inline constexpr double b1 = 5.42937341165687622380535766363e-2;
inline constexpr double b6 = 4.45031289275240888144113950566e0;
inline constexpr double b7 = 1.89151789931450038304281599044e0;
inline constexpr double b8 = -5.8012039600105847814672114227e0;
inline constexpr double b9 = 3.1116436695781989440891606237e-1;
inline constexpr double b10 = -1.52160949662516078556178806805e-1;
inline constexpr double b11 = 2.01365400804030348374776537501e-1;
inline constexpr double b12 = 4.47106157277725905176885569043e-2;

inline constexpr double bhh1 = 0.244094488188976377952755905512e+00;
inline constexpr double bhh2 = 0.733846688281611857341361741547e+00;
inline constexpr double bhh3 = 0.220588235294117647058823529412e-01;

inline constexpr double er1 = 0.1312004499419488073250102996e-01;
inline constexpr double er6 = -0.1225156446376204440720569753e+01;
inline constexpr double er7 = -0.4957589496572501915214079952e+00;
inline constexpr double er8 = 0.1664377182454986536961530415e+01;
inline constexpr double er9 = -0.3503288487499736816886487290e+00;
inline constexpr double er10 = 0.3341791187130174790297318841e+00;
inline constexpr double er11 = 0.8192320648511571246570742613e-01;
inline constexpr double er12 = -0.2235530786388629525884427845e-01;
// clang-format on
}  // namespace detail

template <std::size_t N>
using Vec = std::array<double, N>;

namespace detail {

// Stage buffers of one step. After run(), k4 holds the 8th-order increment
// slope and k5 the new state.
template <std::size_t N>
struct Stages {
  Vec<N> k1, k2, k3, k4, k5, k6, k7, k8, k9, k10, yw;

  template <class Rhs>
  void run(Rhs& f, double t, double h, const Vec<N>& y) {
      for (std::size_t i = 0; i < N; ++i) yw[i] = y[i] + h * a21 * k1[i];
      f(t + c2 * h, yw, k2);
      for (std::size_t i = 0; i < N; ++i) yw[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
      f(t + c3 * h, yw, k3);
      for (std::size_t i = 0; i < N; ++i) yw[i] = y[i] + h * (a41 * k1[i] + a43 * k3[i]);
      f(t + c4 * h, yw, k4);
      for (std::size_t i = 0; i < N; ++i) yw[i] = y[i] + h * (a51 * k1[i] + a53 * k3[i] + a54 * k4[i]);
      f(t + c5 * h, yw, k5);
      for (std::size_t i = 0; i < N; ++i) yw[i] = y[i] + h * (a61 * k1[i] + a64 * k4[i] + a65 * k5[i]);
      f(t + c6 * h, yw, k6);
      for (std::size_t i = 0; i < N; ++i)
        yw[i] = y[i] + h * (a71 * k1[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
      f(t + c7 * h, yw, k7);
      for (std::size_t i = 0; i < N; ++i)
        yw[i] = y[i] + h * (a81 * k1[i] + a84 * k4[i] + a85 * k5[i] + a86 * k6[i] + a87 * k7[i]);
      f(t + c8 * h, yw, k8);
      for (std::size_t i = 0; i < N; ++i)
        yw[i] = y[i] + h * (a91 * k1[i] + a94 * k4[i] + a95 * k5[i] + a96 * k6[i] + a97 * k7[i] + a98 * k8[i]);
      f(t + c9 * h, yw, k9);
      for (std::size_t i = 0; i < N; ++i)
        yw[i] = y[i] + h * (a101 * k1[i] + a104 * k4[i] + a105 * k5[i] + a106 * k6[i] + a107 * k7[i] +
                            a108 * k8[i] + a109 * k9[i]);
      f(t + c10 * h, yw, k10);
      for (std::size_t i = 0; i < N; ++i)
        yw[i] = y[i] + h * (a111 * k1[i] + a114 * k4[i] + a115 * k5[i] + a116 * k6[i] + a117 * k7[i] +
                            a118 * k8[i] + a119 * k9[i] + a1110 * k10[i]);
      f(t + c11 * h, yw, k2);
      for (std::size_t i = 0; i < N; ++i)
        yw[i] = y[i] + h * (a121 * k1[i] + a124 * k4[i] + a125 * k5[i] + a126 * k6[i] + a127 * k7[i] +
                            a128 * k8[i] + a129 * k9[i] + a1210 * k10[i] + a1211 * k2[i]);
      f(t + h, yw, k3);
      for (std::size_t i = 0; i < N; ++i) {
        k4[i] = b1 * k1[i] + b6 * k6[i] + b7 * k7[i] + b8 * k8[i] + b9 * k9[i] + b10 * k10[i] + b11 * k2[i] +
                b12 * k3[i];
        k5[i] = y[i] + h * k4[i];
      }
  }
};

}  // namespace detail

// Integrates y' = f(t, y) from t0 to t1 (t1 < t0 integrates backward) and
// leaves the result in y. `observe(t, y)` runs after every accepted step,
// including the final one; if it returns bool, returning false stops the
// integration at that step. Throws kStepUnderflow if the step collapses.
template <std::size_t N, class Rhs, class Observer>
Stats integrate(Rhs&& f, Vec<N>& y, double t0, double t1, const Options& opt, Observer&& observe) {
  using namespace detail;
  Stats st;
  if (t1 == t0) return st;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double uround = 2.3e-16;
  const double safe = 0.9, facc1 = 1.0 / 0.333, facc2 = 1.0 / 6.0, expo1 = 1.0 / 8.0;

  Stages<N> w;
  auto &k1 = w.k1, &k2 = w.k2, &k3 = w.k3, &k4 = w.k4, &k5 = w.k5, &k6 = w.k6, &k7 = w.k7, &k8 = w.k8, &k9 = w.k9,
       &k10 = w.k10, &yw = w.yw;
  double t = t0;
  f(t, y, k1);
  ++st.rhs_evals;

  auto scale = [&](double a, double b) { return opt.atol + opt.rtol * std::max(std::abs(a), std::abs(b)); };

  double h = opt.h_initial;
  if (h <= 0.0) {
    // Initial step guess from the ratio of state and slope norms, refined
    // with one explicit Euler probe.
    double dnf = 0.0, dny = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = opt.atol + opt.rtol * std::abs(y[i]);
      dnf += (k1[i] / sk) * (k1[i] / sk);
      dny += (y[i] / sk) * (y[i] / sk);
    }
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
    h = std::min(h, std::abs(t1 - t0));
    for (std::size_t i = 0; i < N; ++i) yw[i] = y[i] + dir * h * k1[i];
    f(t + dir * h, yw, k2);
    ++st.rhs_evals;
    double der2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = opt.atol + opt.rtol * std::abs(y[i]);
      der2 += ((k2[i] - k1[i]) / sk) * ((k2[i] - k1[i]) / sk);
    }
    der2 = std::sqrt(der2) / h;
    const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
    const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 1.0 / 8.0);
    h = std::min({100.0 * std::abs(h), h1, std::abs(t1 - t0)});
  }
  h = dir * std::abs(h);

  bool reject = false, last = false;
  for (;;) {
    if (st.accepted + st.rejected >= opt.max_steps) {
      std::ostringstream os;
      os << "integrator exceeded " << opt.max_steps << " steps at t=" << t;
      fail(ErrorCode::kStepUnderflow, os.str());
    }
    if (0.1 * std::abs(h) <= std::abs(t) * uround || std::abs(h) < 1e-300) {
      std::ostringstream os;
      os << "integrator step size underflow at t=" << t << " (h=" << h << ")";
      fail(ErrorCode::kStepUnderflow, os.str());
    }
    if ((t + 1.01 * h - t1) * dir > 0.0) {
      h = t1 - t;
      last = true;
    }

    w.run(f, t, h, y);
    const double xph = t + h;
    st.rhs_evals += 11;

    double err = 0.0, err2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = scale(y[i], k5[i]);
      const double e2 = k4[i] - bhh1 * k1[i] - bhh2 * k9[i] - bhh3 * k3[i];
      const double e1 = er1 * k1[i] + er6 * k6[i] + er7 * k7[i] + er8 * k8[i] + er9 * k9[i] + er10 * k10[i] +
                        er11 * k2[i] + er12 * k3[i];
      err2 += (e2 / sk) * (e2 / sk);
      err += (e1 / sk) * (e1 / sk);
    }
    double deno = err + 0.01 * err2;
    if (deno <= 0.0) deno = 1.0;
    err = std::abs(h) * err * std::sqrt(1.0 / (static_cast<double>(N) * deno));
    if (!std::isfinite(err)) err = 1e10;

    const double fac11 = std::pow(err, expo1);
    const double fac = std::max(facc2, std::min(facc1, fac11 / safe));
    double hnew = h / fac;

    if (err <= 1.0) {
      ++st.accepted;
      if (opt.steps_out) opt.steps_out->push_back(h);
      f(xph, k5, k4);
      ++st.rhs_evals;
      k1 = k4;
      y = k5;
      t = xph;
      if constexpr (std::is_same_v<std::invoke_result_t<Observer, double, const Vec<N>&>, bool>) {
        if (!observe(t, static_cast<const Vec<N>&>(y))) return st;
      } else {
        observe(t, static_cast<const Vec<N>&>(y));
      }
      if (last) return st;
      if (std::abs(hnew) > std::abs(t1 - t) * 10.0) hnew = (t1 - t);
      if (reject) hnew = dir * std::min(std::abs(hnew), std::abs(h));
      reject = false;
    } else {
      hnew = h / std::min(facc1, fac11 / safe);
      reject = true;
      last = false;
      ++st.rejected;
    }
    h = hnew;
  }
}

template <std::size_t N, class Rhs>
Stats integrate(Rhs&& f, Vec<N>& y, double t0, double t1, const Options& opt) {
  return integrate<N>(std::forward<Rhs>(f), y, t0, t1, opt, [](double, const Vec<N>&) {});
}

// Repeats a recorded step sequence without error control. A fixed sequence
// makes the result a smooth function of the initial state, which finite
// differencing relies on.
template <std::size_t N, class Rhs>
void replay(Rhs&& f, Vec<N>& y, double t0, const std::vector<double>& steps) {
  detail::Stages<N> w;
  double t = t0;
  for (double h : steps) {
    f(t, y, w.k1);
    w.run(f, t, h, y);
    y = w.k5;
    t += h;
  }
}

}  // namespace amgs::ode
