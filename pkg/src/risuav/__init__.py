"""Secure RIS-aided UAV communication with a radar echo constraint.

Library layout:

    scenario    configuration, geometry, slot grid, determinism
    channel     path losses, Rician fading, per-slot snapshots
    metrics     SNRs, secrecy rates, constraint certification
    robust_csi  worst-case channel perturbations on the uncertainty ball
    conic       cone-program wrapper with two independent backends
    txbf        transmit beamforming step (successive convex approximation)
    ris_opt     reflector phase step (semidefinite relaxation + rounding)
    trajectory  waypoint step (convexified distance-slack program)
    rxbf        receive combiner step (minorize-maximize)
    bcd         outer block-coordinate loop
    cli         command line front end
"""

__version__ = "0.1.0"
