"""Keyframe-then-interpolate latent diffusion lab.

Two small video diffusion models cover long audio-driven facial animation:
a keyframe model places sparse anchor frames across a whole segment, and an
interpolation model fills the gaps between consecutive anchors. Everything
runs at desk scale on a procedurally generated avatar world so that training,
generation and the full evaluation stack (lip sync, drift, non-speech
vocalisations, emotion adherence, pairwise arenas) fit on one machine.
"""

__version__ = "0.1.0"

FPS = 25
FRAME_SIZE = 64
LATENT_CHANNELS = 4
LATENT_SIZE = 16
AUDIO_DIM = 16          # per stream; fused rows are 2 * AUDIO_DIM wide
KEYFRAMES_PER_SEGMENT = 14
GAP_FRAMES = 12         # interior frames between consecutive keyframes
