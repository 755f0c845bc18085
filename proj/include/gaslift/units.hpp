// Interface-unit conversions. Standard conditions for sL/min are fixed at
// 1 atm and 293.15 K.

#pragma once

#include "gaslift/process_model.hpp"

namespace gaslift::units {

inline constexpr double kStdPressure = 101325.0;     // Pa
inline constexpr double kStdTemperature = 293.15;    // K
inline constexpr double kBar = 1.0e5;                // Pa
inline constexpr double kPerMinute = 1.0 / 60.0;
inline constexpr double kLiter = 1.0e-3;             // m3

/// Gas density at standard conditions (kg/m3).
inline double standard_gas_density(const PhysicalConstants& c) {
  return kStdPressure * c.M_g / (c.R_gas * kStdTemperature);
}

inline double slpm_to_kgs(double q, const PhysicalConstants& c) {
  return q * kLiter * kPerMinute * standard_gas_density(c);
}

inline double kgs_to_slpm(double w, const PhysicalConstants& c) {
  return w / (kLiter * kPerMinute * standard_gas_density(c));
}

inline Vec3 slpm_to_kgs(const Vec3& q, const PhysicalConstants& c) {
  return q * (kLiter * kPerMinute * standard_gas_density(c));
}

inline double lpm_to_kgs(double q, const PhysicalConstants& c) {
  return q * kLiter * kPerMinute * c.rho_l;
}

inline double kgs_to_lpm(double w, const PhysicalConstants& c) {
  return w / (kLiter * kPerMinute * c.rho_l);
}

inline double barg_to_pa(double p_barg, const PhysicalConstants& c) { return p_barg * kBar + c.P_atm; }
inline double pa_to_barg(double p_pa, const PhysicalConstants& c) { return (p_pa - c.P_atm) / kBar; }

}  // namespace gaslift::units
