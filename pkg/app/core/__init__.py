# Core utilities package