import os
from typing import List


class ResourceManager:
    """Manages access to bundled data files and output directories."""

    @staticmethod
    def get_resource_path(relative_path: str) -> str:
        """Absolute path to a file shipped next to the package modules."""
        return os.path.join(os.path.dirname(os.path.abspath(__file__)), relative_path)

    @staticmethod
    def ensure_directories(dirs: List[str]) -> None:
        """Ensure all directories in the list exist."""
        for directory in dirs:
            if directory:
                os.makedirs(directory, exist_ok=True)

    @staticmethod
    def ensure_parent(path: str) -> None:
        """Create the directory that will hold `path`."""
        ResourceManager.ensure_directories([os.path.dirname(os.path.abspath(path))])
