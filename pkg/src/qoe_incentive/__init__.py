"""QoE-driven incentive market between mobile users and AIGC service providers."""
