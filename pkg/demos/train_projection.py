"""Training the projection head with the dual-positive loss.

Run: python demos/train_projection.py

Each anchor crop has two positives: the same object a few frames later, and
the anchor under random attenuation. Crops of other sequences are negatives.
Training pulls positives together and pushes negatives apart, measured as the
margin between mean cos(anchor, attenuated positive) and mean
cos(anchor, negative).
"""

from manta import synth
from manta.bundle import crop_sequence
from manta.contrastive import PairSpec, train


def main() -> None:
    corpus = [crop_sequence(synth.generate_synthetic(c)) for c in synth.corpus_configs()]
    print(f"{len(corpus)} sequences, {sum(len(s.crops) for s in corpus)} crops")
    result = train(corpus, PairSpec(seed=0), epochs=50)
    print("\nepoch  loss on fixed evaluation batches")
    for e in (1, 2, 5, 10, 20, 30, 40, 50):
        print(f"{e:5d}  {result.history[e - 1]:.4f}")
    print(f"\nmargin before training {result.separation_before:.3f}, after {result.separation_after:.3f}")
    print("The untrained head is a fixed random projection with no notion of which changes matter;")
    print("after training, an attenuated view of the same object sits clearly closer than other objects.")


if __name__ == "__main__":
    main()
