"""Print parameter count and checkpoint size as the channel width grows."""

from vidssm.model import init_params, model_size_bytes, param_count

if __name__ == "__main__":
    print(f"{'channels':>8}{'params':>10}{'bytes':>10}")
    for c in (4, 8, 16, 32, 64, 128):
        p = init_params(channels=c, frame_hw=(32, 32))
        print(f"{c:>8}{param_count(p):>10}{model_size_bytes(p):>10}")
