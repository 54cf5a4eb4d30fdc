# Tests package for stab-synth
