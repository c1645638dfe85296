# Cache state-space, placement, replacement-chain and simulation modules
