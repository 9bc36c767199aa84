"""Physical constants and derived coupling prefactors.

Unit system used throughout the package:
    distance  Angstrom
    time      millisecond
    field     Tesla
    coupling  kHz (ordinary frequency; propagators use exp(-2*pi*i*H*t))

CODATA 2018 values, pinned.
"""

MU_B = 9.2740100783e-24  # Bohr magneton, J/T
MU_N = 5.0507837461e-27  # nuclear magneton, J/T
G_E = 2.00231930436  # free-electron g-factor
PLANCK_H = 6.62607015e-34  # J*s
MU0_OVER_4PI = 1e-7  # T*m/A

# Electron gyromagnetic ratio, MHz/T (28024.95 MHz/T).
GAMMA_E_MHZ_PER_T = G_E * MU_B / PLANCK_H / 1e6

# Nuclear Zeeman frequency per unit g-factor, kHz/T (7622.59 kHz/T).
NUCLEAR_KHZ_PER_T = MU_N / PLANCK_H / 1e3

# Electron-nuclear point-dipole prefactor per unit nuclear g, kHz*A^3.
# A_ab = P_EN * g_n * (3 r_a r_b - delta_ab) / r^3
P_EN_KHZ_A3 = MU0_OVER_4PI * G_E * MU_B * MU_N / PLANCK_H * 1e30 / 1e3

# Nuclear-nuclear dipole prefactor per unit g_a*g_b, kHz*A^3.
P_NN_KHZ_A3 = MU0_OVER_4PI * MU_N**2 / PLANCK_H * 1e30 / 1e3

ANGSTROM_CM = 1e-8
ANGSTROM3_CM3 = 1e-24
