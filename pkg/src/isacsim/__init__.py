"""Joint beamforming for bidirectional integrated sensing and communication."""
