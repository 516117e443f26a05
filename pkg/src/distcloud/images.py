"""Image catalog with per-hypervisor variants and a per-cloud transfer cache."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .model import CloudSite, DistCloudError, Hypervisor, ImageVariant, VMImage

SAVE_SECONDS_PER_GB = 60


class DuplicateId(DistCloudError):
    pass


class NoVariant(DistCloudError):
    pass


class UnknownImage(DistCloudError):
    pass


def save_duration(size_gb: float) -> int:
    return math.ceil(size_gb) * SAVE_SECONDS_PER_GB


@dataclass(frozen=True)
class CatalogEntry:
    image: VMImage
    available_at: int


class ImageRepository:
    def __init__(self):
        self._entries: Dict[str, CatalogEntry] = {}
        # (image_id, cloud) pairs with a completed boot
        self._cache: Set[Tuple[str, str]] = set()

    def add(self, image: VMImage, available_at: int = 0) -> None:
        if image.image_id in self._entries:
            raise DuplicateId(image.image_id)
        self._entries[image.image_id] = CatalogEntry(image, available_at)

    def save_image(self, owner: str, image_id: str, size_gb: float,
                   variants: Iterable[ImageVariant], now: int) -> int:
        """Start saving an image; return the sim-time it becomes visible."""
        image = VMImage(image_id, owner, size_gb, frozenset(variants))
        done = now + save_duration(size_gb)
        self.add(image, done)
        return done

    def known(self, image_id: str) -> bool:
        return image_id in self._entries

    def get(self, image_id: str, now: int) -> Optional[VMImage]:
        entry = self._entries.get(image_id)
        if entry is None or entry.available_at > now:
            return None
        return entry.image

    def require(self, image_id: str, now: int) -> VMImage:
        image = self.get(image_id, now)
        if image is None:
            raise UnknownImage(image_id)
        return image

    def resolve_variant(self, image_id: str, hypervisor: Hypervisor, now: int = 0) -> str:
        image = self.require(image_id, now)
        location = image.location_for(Hypervisor(hypervisor))
        if location is None:
            raise NoVariant(f"{image_id} has no {Hypervisor(hypervisor).value} variant")
        return location

    def transfer_time(self, image_id: str, cloud: CloudSite, now: int = 0) -> int:
        image = self.require(image_id, now)
        if (image_id, cloud.name) in self._cache:
            return 0
        # absorb float noise such as 3.8 / 0.1 = 37.99999999999999
        return math.ceil(round(image.size_gb / cloud.image_bandwidth_gb_per_s, 6))

    def record_boot(self, image_id: str, cloud: str) -> None:
        self._cache.add((image_id, cloud))

    def cached(self, image_id: str, cloud: str) -> bool:
        return (image_id, cloud) in self._cache

    def listing(self) -> List[dict]:
        rows = []
        for image_id in sorted(self._entries):
            entry = self._entries[image_id]
            rows.append({
                "id": image_id,
                "owner": entry.image.owner,
                "size_gb": entry.image.size_gb,
                "hypervisors": ",".join(sorted(h.value for h in entry.image.hypervisors)),
                "available_at": entry.available_at,
            })
        return rows
