# Front-ends package
# Waveform conv encoder and Fbank conv+GLU downsampler.
