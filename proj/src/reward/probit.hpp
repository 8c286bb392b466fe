#pragma once

namespace handover {

// Standard normal helpers that stay finite far into the lower tail.
double normal_pdf(double z) noexcept;
double normal_cdf(double z) noexcept;
double log_normal_cdf(double z) noexcept;
// phi(z) / Phi(z)
double inverse_mills(double z) noexcept;

}  // namespace handover
