"""
Script to set up the run-store database
"""
from sqlalchemy import inspect

from vstree.database import DATABASE_URL, create_db_and_tables, engine


def create_database():
    """Create run-store tables (idempotent)"""

    print("Setting up database...")
    print(f"- URL: {DATABASE_URL}")

    create_db_and_tables(engine)
    print("✓ Database tables created")

    tables = inspect(engine).get_table_names()
    print(f"\nDatabase Tables:")
    for table in tables:
        print(f"- {table}")


if __name__ == "__main__":
    create_database()
