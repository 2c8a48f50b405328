import pytest

from prodcat.catalog import Product, Taxonomy


@pytest.fixture
def womens_top_product() -> Product:
    """A realistic apparel product with the attribute mix the pipeline sees."""
    return Product(
        id="prod-001",
        unstructured={
            "product_name": "Rails Womens Plaid Spread Collar Button Down Top",
            "product_short_description": (
                "This Rails Button Down Top is guaranteed authentic. "
                "It's crafted with 100% Rayon."
            ),
        },
        structured=[
            ("assembled_product_weight", "0.5 Pounds"),
            ("color", "White"),
            ("clothing_size_type", "Regular"),
            ("maternity", "N"),
            ("clothing_size_group", "Women"),
            ("age_demographic", "Women"),
            ("brand", "Rails"),
            ("fabric_material", "Jersey"),
            ("clothing_size", "S"),
            ("style_sleeve", "Long Sleeves"),
            ("actual_color", "White Navy Sky"),
            ("country_of_origin_assembly", "CN"),
            ("personalizable", "N"),
        ],
    )


@pytest.fixture
def apparel_taxonomy() -> Taxonomy:
    return Taxonomy(
        [
            ("catalog", "clothing", "Tops"),
            ("catalog", "clothing", "Jeans"),
            ("catalog", "electronics", "Headphones"),
        ]
    )
