#pragma once

// Compactly supported polynomial profiles shared by the control and potential
// builders.  The basic bump is the sextic 64 s^3 (1-s)^3 on [0,1]; extending
// by zero keeps two continuous derivatives, which is what the second-order
// flow expansions need.  Its mass is 16/35, so the normalized spike below has
// unit integral and its running integral is a septic smoothstep.

#include <algorithm>

#include <manekit/types.hpp>

namespace manekit {

template <typename S>
S poly_bump(S s) {
  if (s <= S(0) || s >= S(1)) return S(0);
  const S u = S(1) - s;
  return S(64) * s * s * s * u * u * u;
}

template <typename S>
S poly_bump_d1(S s) {
  if (s <= S(0) || s >= S(1)) return S(0);
  const S u = S(1) - s;
  return S(192) * s * s * u * u * (S(1) - S(2) * s);
}

template <typename S>
S poly_bump_d2(S s) {
  if (s <= S(0) || s >= S(1)) return S(0);
  return S(384) * s * (S(1) - s) * (S(1) - S(5) * s + S(5) * s * s);
}

// Running integral of poly_bump scaled to reach 1: 35 s^4 - 84 s^5 + 70 s^6
// - 20 s^7, three continuous derivatives across both ends.
template <typename S>
S smoothstep_c3(S s) {
  if (s <= S(0)) return S(0);
  if (s >= S(1)) return S(1);
  const S s2 = s * s;
  return s2 * s2 * (S(35) + s * (S(-84) + s * (S(70) - S(20) * s)));
}

template <typename S>
S smoothstep_c3_d1(S s) {
  return S(35) / S(16) * poly_bump(s);
}

// Plateau cutoff: 1 on [0, 1/2], 0 on [1, inf), smoothstep in between.
template <typename S>
S plateau_c3(S s) {
  if (s <= S(0.5)) return S(1);
  if (s >= S(1)) return S(0);
  return smoothstep_c3(S(2) - S(2) * s);
}

template <typename S>
S plateau_c3_d1(S s) {
  if (s <= S(0.5) || s >= S(1)) return S(0);
  return S(-35) / S(8) * poly_bump(S(2) - S(2) * s);
}

template <typename S>
S plateau_c3_d2(S s) {
  if (s <= S(0.5) || s >= S(1)) return S(0);
  return S(35) / S(4) * poly_bump_d1(S(2) - S(2) * s);
}

// Unit-mass spike supported on (start, start + width).
template <typename S>
struct DiracBump {
  S start = S(0);
  S width = S(1);

  S value(S t) const {
    return S(35) / S(16) * poly_bump((t - start) / width) / width;
  }
  S deriv(S t) const {
    return S(35) / S(16) * poly_bump_d1((t - start) / width) / (width * width);
  }
  S deriv2(S t) const {
    return S(35) / S(16) * poly_bump_d2((t - start) / width) / (width * width * width);
  }
  // Integral from the left end; a C3 step from 0 to 1 across the support.
  S cumulative(S t) const { return smoothstep_c3((t - start) / width); }
};

}  // namespace manekit
