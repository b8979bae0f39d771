"""Image quality scoring, enhancement and training-time augmentation.

Images are ``uint8`` arrays of shape (H, W, 3) in RGB order. Quality
sub-scores are computed on BT.601 luma.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DataError, ProtocolViolation

WEIGHTS = {"sharpness": 0.35, "contrast": 0.25, "brightness": 0.20, "blur": 0.20}
QUALITY_THRESHOLD = 0.65

LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


@dataclass(frozen=True)
class QualityConfig:
    brightness_low: float = 40.0
    brightness_high: float = 220.0
    # half-saturation points of the x / (x + c) squashing
    sharpness_scale: float = 100.0
    blur_laplacian_scale: float = 100.0
    blur_tenengrad_scale: float = 1000.0
    threshold: float = QUALITY_THRESHOLD


DEFAULT_QUALITY = QualityConfig()


@dataclass(frozen=True)
class QualityReport:
    sharpness: float
    contrast: float
    brightness: float
    blur: float

    @property
    def composite(self) -> float:
        return (WEIGHTS["sharpness"] * self.sharpness + WEIGHTS["contrast"] * self.contrast
                + WEIGHTS["brightness"] * self.brightness + WEIGHTS["blur"] * self.blur)


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected an HxWx3 image, got shape {img.shape}")
    f = img.astype(np.float64)
    return 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]


def _filter3(gray: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid-region 3x3 correlation (interior pixels only)."""
    h, w = gray.shape
    if h < 3 or w < 3:
        raise DataError(f"image must be at least 3x3, got {h}x{w}")
    out = np.zeros((h - 2, w - 2))
    for i in range(3):
        for j in range(3):
            if k[i, j]:
                out += k[i, j] * gray[i:i + h - 2, j:j + w - 2]
    return out


def laplacian_variance(img: np.ndarray) -> float:
    return float(_filter3(to_gray(img), LAPLACIAN).var())


def tenengrad(img: np.ndarray) -> float:
    """Mean squared Sobel gradient magnitude over the interior."""
    g = to_gray(img)
    gx = _filter3(g, SOBEL_X)
    gy = _filter3(g, SOBEL_X.T)
    return float(np.mean(gx * gx + gy * gy))


def rms_contrast(img: np.ndarray) -> float:
    g = to_gray(img)
    if g.size == 0:
        raise DataError("empty image")
    return float((g / 255.0).std())


def brightness_score(img: np.ndarray, config: QualityConfig = DEFAULT_QUALITY) -> float:
    """1 inside [low, high] mean luma, falling linearly to 0 at 0 and at 255."""
    m = float(to_gray(img).mean())
    lo, hi = config.brightness_low, config.brightness_high
    if m < lo:
        return max(0.0, m / lo)
    if m > hi:
        return max(0.0, (255.0 - m) / (255.0 - hi))
    return 1.0


def _squash(x: float, c: float) -> float:
    return x / (x + c) if x > 0 else 0.0


def sharpness_score(img: np.ndarray, config: QualityConfig = DEFAULT_QUALITY) -> float:
    return _squash(laplacian_variance(img), config.sharpness_scale)


def blur_score(img: np.ndarray, config: QualityConfig = DEFAULT_QUALITY) -> float:
    lap = _squash(laplacian_variance(img), config.blur_laplacian_scale)
    ten = _squash(tenengrad(img), config.blur_tenengrad_scale)
    return (lap + ten) / 2


def contrast_score(img: np.ndarray) -> float:
    # the std of values in [0, 1] is at most 0.5
    return min(1.0, 2.0 * rms_contrast(img))


def composite_quality(img: np.ndarray, config: QualityConfig = DEFAULT_QUALITY) -> QualityReport:
    return QualityReport(
        sharpness=sharpness_score(img, config),
        contrast=contrast_score(img),
        brightness=brightness_score(img, config),
        blur=blur_score(img, config),
    )


def passes_filter(report: QualityReport, threshold: float = QUALITY_THRESHOLD) -> bool:
    return report.composite > threshold


# --------------------------------------------------------------------------
# enhancement
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EnhanceConfig:
    bilateral_sigma_space: float = 75.0
    bilateral_sigma_color: float = 75.0
    bilateral_diameter: int = 9
    clahe_clip: float = 3.0
    clahe_tiles: int = 8
    unsharp_sigma: float = 2.0
    unsharp_amount: float = 1.5
    unsharp_threshold: float = 0.0
    gamma: float = 1.2
    contrast_alpha: float = 1.1
    contrast_beta: float = 5.0


DEFAULT_ENHANCE = EnhanceConfig()


def _clip_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def bilateral(img: np.ndarray, c: EnhanceConfig = DEFAULT_ENHANCE) -> np.ndarray:
    return cv2.bilateralFilter(img, c.bilateral_diameter, c.bilateral_sigma_color, c.bilateral_sigma_space,
                               borderType=cv2.BORDER_REFLECT_101)


def clahe_lab(img: np.ndarray, c: EnhanceConfig = DEFAULT_ENHANCE) -> np.ndarray:
    lab = cv2.cvtColor(img, cv2.COLOR_RGB2LAB)
    clahe = cv2.createCLAHE(clipLimit=c.clahe_clip, tileGridSize=(c.clahe_tiles, c.clahe_tiles))
    lab[..., 0] = clahe.apply(np.ascontiguousarray(lab[..., 0]))
    return cv2.cvtColor(lab, cv2.COLOR_LAB2RGB)


def unsharp_mask(img: np.ndarray, c: EnhanceConfig = DEFAULT_ENHANCE) -> np.ndarray:
    f = img.astype(np.float64)
    blurred = cv2.GaussianBlur(f, (0, 0), c.unsharp_sigma, borderType=cv2.BORDER_REFLECT_101)
    detail = f - blurred
    if c.unsharp_threshold > 0:
        detail = np.where(np.abs(detail) >= c.unsharp_threshold, detail, 0.0)
    return _clip_u8(f + c.unsharp_amount * detail)


def gamma_correct(img: np.ndarray, gamma: float = DEFAULT_ENHANCE.gamma) -> np.ndarray:
    """out = in^(1/gamma) on [0, 1]; gamma > 1 brightens mid-tones."""
    v = np.asarray(img, dtype=np.float64) / 255.0
    return _clip_u8(255.0 * np.power(v, 1.0 / gamma))


def contrast_scale(img: np.ndarray, alpha: float = DEFAULT_ENHANCE.contrast_alpha,
                   beta: float = DEFAULT_ENHANCE.contrast_beta) -> np.ndarray:
    return _clip_u8(alpha * np.asarray(img, dtype=np.float64) + beta)


def enhance(img: np.ndarray, config: EnhanceConfig = DEFAULT_ENHANCE) -> np.ndarray:
    """Bilateral denoise, CLAHE on L*, unsharp mask, gamma, contrast scaling; uint8 between stages."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise DataError(f"enhance expects an HxWx3 uint8 image, got {img.shape} {img.dtype}")
    out = bilateral(img, config)
    out = clahe_lab(out, config)
    out = unsharp_mask(out, config)
    out = gamma_correct(out, config.gamma)
    return contrast_scale(out, config.contrast_alpha, config.contrast_beta)


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    rotate_p: float = 0.5
    rotate_deg: float = 20.0
    flip_p: float = 0.5
    color_p: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.3
    noise_p: float = 0.3
    noise_sigma: tuple[float, float] = (0.01, 0.03)
    motion_blur_p: float = 0.3
    motion_blur_kernel: int = 5

    @classmethod
    def none(cls) -> "AugmentPolicy":
        return cls(rotate_p=0.0, flip_p=0.0, color_p=0.0, noise_p=0.0, motion_blur_p=0.0)


DEFAULT_AUGMENT = AugmentPolicy()


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1])


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    h, w = img.shape[:2]
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), degrees, 1.0)
    return cv2.warpAffine(img, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)


def adjust_color(img: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    """Multiplicative factors (1 = unchanged) for brightness, contrast about the mean luma, and saturation."""
    f = img.astype(np.float64) * brightness
    gray = to_gray(np.clip(f, 0, 255))
    f = gray.mean() + contrast * (f - gray.mean())
    gray = to_gray(np.clip(f, 0, 255))[..., None]
    f = gray + saturation * (f - gray)
    return _clip_u8(f)


def add_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    f = img.astype(np.float64) / 255.0 + rng.normal(0.0, sigma, img.shape)
    return _clip_u8(255.0 * f)


def motion_blur(img: np.ndarray, ksize: int, angle: float) -> np.ndarray:
    k = np.zeros((ksize, ksize), dtype=np.float64)
    k[ksize // 2, :] = 1.0
    m = cv2.getRotationMatrix2D(((ksize - 1) / 2.0, (ksize - 1) / 2.0), angle, 1.0)
    k = cv2.warpAffine(k, m, (ksize, ksize))
    k /= k.sum()
    return _clip_u8(cv2.filter2D(img.astype(np.float64), -1, k, borderType=cv2.BORDER_REFLECT_101))


@dataclass
class AugmentResult:
    image: np.ndarray
    log: list[dict] = field(default_factory=list)


def augment(img: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy = DEFAULT_AUGMENT,
            split: str = "train") -> AugmentResult:
    """Apply each transform independently with its own probability; every applied transform is logged."""
    if split != "train":
        raise ProtocolViolation(f"augmentation is only allowed on the train split, not {split!r}")
    out = np.asarray(img)
    log: list[dict] = []
    # draw every decision up front so the rng stream does not depend on image content
    u = rng.random(5)
    if u[0] < policy.rotate_p:
        deg = float(rng.uniform(-policy.rotate_deg, policy.rotate_deg))
        out = rotate(out, deg)
        log.append({"op": "rotate", "degrees": deg})
    if u[1] < policy.flip_p:
        out = hflip(out)
        log.append({"op": "hflip"})
    if u[2] < policy.color_p:
        b = float(rng.uniform(1 - policy.brightness, 1 + policy.brightness))
        c = float(rng.uniform(1 - policy.contrast, 1 + policy.contrast))
        s = float(rng.uniform(1 - policy.saturation, 1 + policy.saturation))
        out = adjust_color(out, b, c, s)
        log.append({"op": "color", "brightness": b, "contrast": c, "saturation": s})
    if u[3] < policy.noise_p:
        sigma = float(rng.uniform(*policy.noise_sigma))
        out = add_noise(out, sigma, rng)
        log.append({"op": "noise", "sigma": sigma})
    if u[4] < policy.motion_blur_p:
        angle = float(rng.uniform(0.0, 180.0))
        out = motion_blur(out, policy.motion_blur_kernel, angle)
        log.append({"op": "motion_blur", "kernel": policy.motion_blur_kernel, "angle": angle})
    return AugmentResult(np.ascontiguousarray(out), log)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def read_image(path: str | Path) -> np.ndarray:
    """Read a PNG/BMP as RGB uint8."""
    arr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if arr is None:
        raise DataError(f"cannot read image {path}")
    return cv2.cvtColor(arr, cv2.COLOR_BGR2RGB)


def write_image(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() not in (".png", ".bmp"):
        raise ValueError(f"only lossless .png/.bmp output is supported, got {path.suffix}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(np.asarray(img, dtype=np.uint8), cv2.COLOR_RGB2BGR)):
        raise DataError(f"cannot write image {path}")


def resize(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA)


QUALITY_COLUMNS = ("path", "sharpness", "contrast", "brightness", "blur", "composite", "pass")


def quality_row(path: str, report: QualityReport, threshold: float = QUALITY_THRESHOLD) -> list[str]:
    vals = [report.sharpness, report.contrast, report.brightness, report.blur, report.composite]
    return [path] + [f"{v:.6f}" for v in vals] + [str(int(passes_filter(report, threshold)))]
